import numpy as np
import pytest

from lqgcap import (
    BudgetedProblem,
    Policy,
    UBDecision,
    UBSolution,
    evaluate_policy,
    extract_policy,
    solve_ub,
    tightness_certificate,
)
from lqgcap.lower_bound import lower_bound_from_ub, ub_riccati_residual


def _ub_with_decision(c, dec, gap=0.0):
    """Wrap a decision triple as a UBSolution for extraction tests."""
    psi_y = (c.model.J @ dec.Pi @ c.model.J.T
             + c.model.H @ dec.SigmaHat @ c.model.H.T
             + c.model.H @ dec.Gamma.T @ c.model.J.T
             + c.model.J @ dec.Gamma @ c.model.H.T + c.Psi)
    kypsi = (c.model.F @ dec.Gamma.T @ c.model.J.T
             + c.model.F @ dec.SigmaHat @ c.model.H.T
             + c.model.G @ dec.Pi @ c.model.J.T
             + c.model.G @ dec.Gamma @ c.model.H.T + c.K_p @ c.Psi)
    k_y = np.linalg.solve(psi_y.T, kypsi.T).T
    from lqgcap import rate_from_psi
    return UBSolution(decision=dec, Psi_Y=psi_y, K_Y=k_y,
                      rate=rate_from_psi(psi_y, c.Psi),
                      cost=c.cost_of(dec.Pi, dec.Gamma, dec.SigmaHat),
                      duality_gap=gap, iterations=0, riccati_lmi_slack=0.0)


class TestExtractPolicy:
    def test_zero_sigma_hat_gives_pi_as_dither(self, c1):
        dec = UBDecision(Pi=np.array([[0.7]]), Gamma=np.zeros((1, 1)),
                         SigmaHat=np.zeros((1, 1)))
        pol = extract_policy(_ub_with_decision(c1, dec), c1.control)
        assert pol.GammaBar[0, 0] == 0.0
        assert pol.M[0, 0] == pytest.approx(0.7)

    def test_s1_extraction_has_vanishing_dither(self, s1, w1, c1):
        ub = solve_ub(BudgetedProblem(s1, w1, 2.0), consts=c1)
        pol = extract_policy(ub, c1.control)
        assert np.linalg.norm(pol.M) <= 1e-6
        assert pol.GammaBar.shape == (1, 1)

    def test_vector_extraction_shapes(self, s2, w2, c2):
        ub = solve_ub(BudgetedProblem(s2, w2, 1.5 * c2.minimal_cost), consts=c2)
        pol = extract_policy(ub, c2.control)
        assert pol.GammaBar.shape == (1, 3)
        assert pol.M.shape == (1, 1)
        assert pol.M[0, 0] >= 0.0

    def test_negative_eigenvalues_clipped(self, c1):
        dec = UBDecision(Pi=np.array([[0.1]]), Gamma=np.array([[0.5]]),
                         SigmaHat=np.array([[1.0]]))
        pol = extract_policy(_ub_with_decision(c1, dec), c1.control)
        assert pol.M[0, 0] == 0.0
        assert pol.m_clip == pytest.approx(0.15)


class TestEvaluatePolicy:
    def test_pure_lqg_policy_rate_zero_budget_floor(self, c1, w1):
        pol = Policy(GammaBar=np.zeros((1, 1)), M=np.zeros((1, 1)),
                     K_LQR=c1.K_LQR)
        lb = evaluate_policy(c1.estimator, w1, c1.control, pol)
        assert lb.rate == pytest.approx(0.0, abs=1e-12)
        assert lb.achieved_budget == pytest.approx(c1.minimal_cost, abs=1e-9)

    def test_s1_extracted_policy_meets_ub(self, s1, w1, c1):
        ub = solve_ub(BudgetedProblem(s1, w1, 2.0), consts=c1)
        lb = lower_bound_from_ub(c1, ub)
        assert abs(ub.rate - lb.rate) <= 1e-6
        assert abs(lb.achieved_budget - 2.0) <= 1e-6

    def test_vector_extracted_policy_close_to_ub(self, s2, w2, c2):
        p = 1.5 * c2.minimal_cost
        ub = solve_ub(BudgetedProblem(s2, w2, p), consts=c2)
        lb = lower_bound_from_ub(c2, ub)
        assert (ub.rate - lb.rate) / max(ub.rate, 1e-9) <= 1e-3


class TestWeakDuality:
    @pytest.mark.parametrize("p", [1.35, 1.8, 2.7, 4.0])
    def test_scalar_budgets(self, s1, w1, c1, p):
        ub = solve_ub(BudgetedProblem(s1, w1, p), consts=c1)
        lb = lower_bound_from_ub(c1, ub)
        assert lb.rate <= ub.rate + 1e-8
        assert lb.achieved_budget <= p + 1e-6 * max(1.0, p)

    def test_vector_budget(self, s2, w2, c2):
        p = 2.0 * c2.minimal_cost
        ub = solve_ub(BudgetedProblem(s2, w2, p), consts=c2)
        lb = lower_bound_from_ub(c2, ub)
        assert lb.rate <= ub.rate + 1e-8
        assert lb.achieved_budget <= p + 1e-6 * max(1.0, p)


class TestSubstitutionChain:
    def test_policy_map_equals_ub_map_at_solution(self, s1, w1, c1):
        """The tightness equation's right side evaluated with the UB
        variables equals the policy equation's right side at the extracted
        (GammaBar, M): the first LMI makes the substitution exact."""
        ub = solve_ub(BudgetedProblem(s1, w1, 2.0), consts=c1)
        pol = extract_policy(ub, c1.control)
        est = c1.estimator
        d = ub.decision
        ub_rhs = (est.F @ d.SigmaHat @ est.F.T + est.F @ d.Gamma.T @ est.G.T
                  + est.G @ d.Gamma @ est.F.T + est.G @ d.Pi @ est.G.T
                  + est.K_p @ est.Psi @ est.K_p.T
                  - ub.K_Y @ ub.Psi_Y @ ub.K_Y.T)
        ft = est.F + est.G @ pol.GammaBar
        ht = est.H + est.J @ pol.GammaBar
        psi_bar = (ht @ d.SigmaHat @ ht.T + est.J @ pol.M @ est.J.T + est.Psi)
        k_bar = (ft @ d.SigmaHat @ ht.T + est.G @ pol.M @ est.J.T
                 + est.K_p @ est.Psi) @ np.linalg.inv(psi_bar)
        pol_rhs = (ft @ d.SigmaHat @ ft.T + est.G @ pol.M @ est.G.T
                   + est.K_p @ est.Psi @ est.K_p.T
                   - k_bar @ psi_bar @ k_bar.T)
        assert np.linalg.norm(ub_rhs - pol_rhs) <= 1e-9


class TestCertificate:
    def test_s1_certified_tight(self, s1, w1, c1):
        ub = solve_ub(BudgetedProblem(s1, w1, 2.0), consts=c1)
        lb = lower_bound_from_ub(c1, ub)
        cert = tightness_certificate(ub, lb, c1.estimator)
        assert cert.tight
        assert cert.detectable
        assert cert.riccati_residual <= 1e-6 * (
            1 + np.linalg.norm(ub.decision.SigmaHat))
        assert cert.rate_gap >= -1e-8

    def test_zero_dither_routes_through_recursion(self, s1, w1, c1):
        """On S1 the optimal dither is zero, so the stabilizability test has
        nothing to work with; agreement of the recursion limit with the UB
        optimizer certifies instead."""
        ub = solve_ub(BudgetedProblem(s1, w1, 2.0), consts=c1)
        lb = lower_bound_from_ub(c1, ub)
        cert = tightness_certificate(ub, lb, c1.estimator)
        assert cert.tight
        assert not cert.stabilizable
        assert cert.route == "direct-recursion"
        assert cert.sigma_match <= 1e-6

    def test_perturbed_policy_not_certified(self, s1, w1, c1):
        ub = solve_ub(BudgetedProblem(s1, w1, 2.0), consts=c1)
        pol = extract_policy(ub, c1.control)
        worse = Policy(GammaBar=pol.GammaBar * 0.5, M=pol.M,
                       K_LQR=pol.K_LQR)
        lb = evaluate_policy(c1.estimator, w1, c1.control, worse)
        cert = tightness_certificate(ub, lb, c1.estimator)
        assert not cert.tight
        assert any("rate_gap" in r for r in cert.reasons)

    def test_vector_certified(self, s2, w2, c2):
        ub = solve_ub(BudgetedProblem(s2, w2, 2.0 * c2.minimal_cost), consts=c2)
        lb = lower_bound_from_ub(c2, ub)
        cert = tightness_certificate(ub, lb, c2.estimator)
        assert cert.tight

    def test_residual_helper_matches_certificate(self, s1, w1, c1):
        ub = solve_ub(BudgetedProblem(s1, w1, 2.0), consts=c1)
        lb = lower_bound_from_ub(c1, ub)
        cert = tightness_certificate(ub, lb, c1.estimator)
        assert cert.riccati_residual == pytest.approx(
            ub_riccati_residual(ub, c1.estimator))
