import numpy as np
import pytest
import scipy.linalg

from lqgcap import (
    CostWeights,
    Policy,
    SystemModel,
    pbh_test,
    riccati_recursion,
    solve_control_riccati,
    solve_filter_riccati,
    solve_policy_riccati,
)
from lqgcap.linalg import spectral_radius, sym

from oracles import quad_root_sigma_s1, scalar_policy_fixed_point


def filter_residual(model, fc):
    k = fc.K_p
    rhs = model.F @ fc.Sigma @ model.F.T + model.W - k @ fc.Psi @ k.T
    return np.linalg.norm(fc.Sigma - rhs) / (1 + np.linalg.norm(fc.Sigma))


def control_residual(model, weights, cc):
    rhs = (model.F.T @ cc.E @ model.F + weights.Q
           - cc.K_LQR.T @ cc.Psi_LQR @ cc.K_LQR)
    return np.linalg.norm(cc.E - rhs) / (1 + np.linalg.norm(cc.E))


class TestFilter:
    def test_s1_quadratic_root(self, s1):
        fc = solve_filter_riccati(s1)
        assert abs(fc.Sigma[0, 0] - quad_root_sigma_s1()) <= 1e-9
        assert filter_residual(s1, fc) <= 1e-9
        assert spectral_radius(s1.F - fc.K_p @ s1.H) < 1

    def test_static_state_one_step(self, w1):
        model = SystemModel(F=0, G=1, H=1, J=1, W=1, V=1, L=0)
        fc = solve_filter_riccati(model)
        assert fc.Sigma[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_vector_system_stabilizes_unstable_plant(self, s2):
        fc = solve_filter_riccati(s2)
        assert spectral_radius(s2.F) == pytest.approx(1.2)
        assert spectral_radius(s2.F - fc.K_p @ s2.H) < 1
        assert np.all(np.linalg.eigvalsh(fc.Sigma) > 0)
        assert filter_residual(s2, fc) <= 1e-9

    @pytest.mark.parametrize("name,mats", [
        ("s1", dict(F=0.5, G=1, H=1, J=1, W=1, V=1, L=0)),
        ("corr", dict(F=0.9, G=1, H=1, J=0, W=2, V=1, L=0.5)),
    ])
    def test_agrees_with_scipy_dare(self, name, mats, w1):
        model = SystemModel(**mats)
        fc = solve_filter_riccati(model)
        ref = scipy.linalg.solve_discrete_are(
            model.F.T, model.H.T, model.W, model.V, s=model.L)
        assert np.allclose(fc.Sigma, ref, atol=1e-9)

    def test_vector_agrees_with_scipy_dare(self, s2):
        fc = solve_filter_riccati(s2)
        ref = scipy.linalg.solve_discrete_are(
            s2.F.T, s2.H.T, s2.W, s2.V, s=s2.L)
        assert np.allclose(fc.Sigma, ref, atol=1e-8)


class TestControl:
    def test_s1_duality_with_filter(self, s1, w1):
        fc = solve_filter_riccati(s1)
        cc = solve_control_riccati(s1, w1)
        assert abs(fc.Sigma[0, 0] - cc.E[0, 0]) <= 1e-9
        assert control_residual(s1, w1, cc) <= 1e-9
        assert cc.K_LQR[0, 0] == pytest.approx(0.265564, abs=5e-7)
        assert cc.Psi_LQR[0, 0] == pytest.approx(2.132782, abs=5e-7)

    def test_zero_state_weight(self, s1):
        cc = solve_control_riccati(s1, CostWeights(Q=0, R=1))
        assert cc.E[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert cc.K_LQR[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert cc.Psi_LQR[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_static_dynamics(self, w1):
        model = SystemModel(F=0, G=1, H=1, J=1, W=1, V=1, L=0)
        cc = solve_control_riccati(model, w1)
        assert cc.E[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert cc.K_LQR[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_vector_agrees_with_scipy_dare(self, s2, w2):
        cc = solve_control_riccati(s2, w2)
        ref = scipy.linalg.solve_discrete_are(s2.F, s2.G, w2.Q, w2.R)
        assert np.allclose(cc.E, ref, atol=1e-8)
        assert spectral_radius(s2.F - s2.G @ cc.K_LQR) < 1


class TestPolicyRiccati:
    def test_pure_lqg_policy(self, c1):
        pol = Policy(GammaBar=np.zeros((1, 1)), M=np.zeros((1, 1)),
                     K_LQR=c1.K_LQR)
        prs = solve_policy_riccati(c1.estimator, pol)
        assert prs.SigmaHat[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert prs.Psi_Y[0, 0] == pytest.approx(c1.Psi[0, 0], abs=1e-12)
        assert prs.K_Y[0, 0] == pytest.approx(c1.K_p[0, 0], abs=1e-12)

    def test_unit_dither_matches_fixed_point_oracle(self, c1):
        pol = Policy(GammaBar=np.zeros((1, 1)), M=np.ones((1, 1)),
                     K_LQR=c1.K_LQR)
        prs = solve_policy_riccati(c1.estimator, pol)
        want = scalar_policy_fixed_point(
            0.5, 1, 1, 1, c1.K_p[0, 0], c1.Psi[0, 0], 0.0, 1.0)
        assert prs.SigmaHat[0, 0] == pytest.approx(want, abs=1e-9)
        assert prs.Psi_Y[0, 0] == pytest.approx(
            prs.SigmaHat[0, 0] + 1.0 + c1.Psi[0, 0], abs=1e-9)

    def test_zero_dither_maximal_root(self, c1):
        # GammaBar chosen to destabilize the zero fixed point: the bootstrap
        # must push the recursion to the maximal solution
        gbar = 1.5
        pol = Policy(GammaBar=np.array([[gbar]]), M=np.zeros((1, 1)),
                     K_LQR=c1.K_LQR)
        est = c1.estimator
        f_s = (est.F + est.G * gbar - est.K_p @ (est.H + est.J * gbar))[0, 0]
        assert abs(f_s) > 1
        prs = solve_policy_riccati(est, pol)
        want = c1.Psi[0, 0] * (f_s ** 2 - 1) / (est.H + est.J * gbar)[0, 0] ** 2
        assert prs.bootstrapped
        assert prs.SigmaHat[0, 0] == pytest.approx(want, rel=1e-8)

    def test_residual_invariant(self, c1):
        pol = Policy(GammaBar=np.array([[0.3]]), M=np.array([[0.2]]),
                     K_LQR=c1.K_LQR)
        prs = solve_policy_riccati(c1.estimator, pol)
        assert prs.residual <= 1e-9 * (1 + np.linalg.norm(prs.SigmaHat))
        assert np.all(np.linalg.eigvalsh(prs.Psi_Y - c1.Psi) >= -1e-12)


class TestRecursions:
    def test_filter_one_step_from_zero(self, s1):
        trace = riccati_recursion("filter", 1, model=s1, start=np.zeros((1, 1)))
        assert len(trace) == 2
        assert trace[1][0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_filter_one_step_with_cross_covariance(self, w1):
        model = SystemModel(F=0.5, G=1, H=1, J=1, W=2, V=1, L=0.5)
        trace = riccati_recursion("filter", 1, model=model, start=np.zeros((1, 1)))
        assert trace[1][0, 0] == pytest.approx(2 - 0.5 ** 2 / 1.0, abs=1e-14)

    def test_control_converges_geometrically(self, s1, w1):
        cc = solve_control_riccati(s1, w1)
        trace = riccati_recursion("control", 50, model=s1, weights=w1)
        assert np.linalg.norm(trace[-1] - cc.E) <= 1e-10

    def test_policy_zero_dither_map(self, c1):
        gbar = 1.5
        pol = Policy(GammaBar=np.array([[gbar]]), M=np.zeros((1, 1)),
                     K_LQR=c1.K_LQR)
        est = c1.estimator
        f_s = (est.F + est.G * gbar - est.K_p @ (est.H + est.J * gbar))[0, 0]
        h_t = (est.H + est.J * gbar)[0, 0]
        psi = c1.Psi[0, 0]
        start = np.array([[0.3]])
        trace = riccati_recursion("policy", 5, estimator=est, policy=pol,
                                  start=start)
        x = start[0, 0]
        for step in trace[1:]:
            x = f_s ** 2 * x * psi / (h_t ** 2 * x + psi)
            assert step[0, 0] == pytest.approx(x, rel=1e-12)

    def test_policy_zero_dither_monotone_regions(self, c1):
        gbar = 1.5
        pol = Policy(GammaBar=np.array([[gbar]]), M=np.zeros((1, 1)),
                     K_LQR=c1.K_LQR)
        est = c1.estimator
        prs = solve_policy_riccati(est, pol)
        top = prs.SigmaHat[0, 0]
        for x in np.linspace(0.01, 0.99, 15) * top:
            nxt = riccati_recursion("policy", 1, estimator=est, policy=pol,
                                    start=np.array([[x]]))[1][0, 0]
            assert nxt > x
        for x in top * np.linspace(1.01, 3.0, 15):
            nxt = riccati_recursion("policy", 1, estimator=est, policy=pol,
                                    start=np.array([[x]]))[1][0, 0]
            assert nxt < x


class TestPBH:
    def test_stable_pair_detectable_with_zero_output(self):
        assert pbh_test(np.array([[0.5]]), np.array([[0.0]]), "detectable").ok

    def test_unstable_pair_not_stabilizable(self):
        res = pbh_test(np.array([[2.0]]), np.array([[0.0]]), "stabilizable")
        assert not res.ok
        assert res.eigenvalue == pytest.approx(2.0)
        assert res.witness is not None

    def test_unit_circle_mode(self):
        f = np.diag([1.0, 0.5])
        assert not pbh_test(f, np.array([[0.0], [1.0]]),
                            "unit_circle_controllable").ok
        assert pbh_test(f, np.array([[1.0], [0.0]]),
                        "unit_circle_controllable").ok

    def test_repeated_eigenvalue_subspace(self):
        # both unit eigendirections must be reachable; a rank-1 B misses one
        f = np.eye(2)
        assert not pbh_test(f, np.array([[1.0], [1.0]]), "stabilizable").ok
        assert pbh_test(f, np.eye(2), "stabilizable").ok

    def test_detectable_matches_dare_existence(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            f = rng.standard_normal((3, 3))
            f = 1.1 * f / spectral_radius(f)
            h = rng.standard_normal((1, 3))
            w = np.eye(3)
            v = np.array([[1.0]])
            try:
                sig = scipy.linalg.solve_discrete_are(f.T, h.T, w, v)
            except np.linalg.LinAlgError:
                continue
            k = (f @ sig @ h.T) @ np.linalg.inv(h @ sig @ h.T + v)
            if spectral_radius(f - k @ h) < 1:
                assert pbh_test(f, h, "detectable").ok

    def test_stabilizability_pair_stabilizable_with_positive_dither(self, c1):
        from lqgcap.lower_bound import _stabilizability_pair
        pol = Policy(GammaBar=np.array([[0.3]]), M=np.array([[0.5]]),
                     K_LQR=c1.K_LQR)
        fs, gsws = _stabilizability_pair(c1.estimator, pol)
        assert (c1.model.G - c1.K_p @ c1.model.J)[0, 0] != 0
        assert pbh_test(fs, gsws, "stabilizable").ok

    def test_dimension_checks(self):
        from lqgcap.errors import DimensionMismatch
        with pytest.raises(DimensionMismatch):
            pbh_test(np.eye(2), np.eye(3), "stabilizable")


def test_every_fixed_point_resubstitutes(s1, w1, s2, w2, c1):
    for model, weights in [(s1, w1), (s2, w2)]:
        fc = solve_filter_riccati(model)
        cc = solve_control_riccati(model, weights)
        assert filter_residual(model, fc) <= 1e-9
        assert control_residual(model, weights, cc) <= 1e-9
    pol = Policy(GammaBar=np.array([[0.2]]), M=np.array([[0.1]]),
                 K_LQR=c1.K_LQR)
    prs = solve_policy_riccati(c1.estimator, pol)
    est = c1.estimator
    ft = est.F + est.G @ pol.GammaBar
    rhs = (ft @ prs.SigmaHat @ ft.T + est.G @ pol.M @ est.G.T
           + est.K_p @ est.Psi @ est.K_p.T - prs.K_Y @ prs.Psi_Y @ prs.K_Y.T)
    rel = np.linalg.norm(prs.SigmaHat - sym(rhs)) / (1 + np.linalg.norm(prs.SigmaHat))
    assert rel <= 1e-9
