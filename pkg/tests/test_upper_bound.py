import numpy as np
import pytest

from lqgcap import (
    BudgetedProblem,
    CostWeights,
    ProblemConstants,
    SolverOptions,
    feasibility,
    rate_from_psi,
    solve_scalar,
    solve_ub,
    verify_scalar_kkt,
)
from lqgcap.barrier import AffineBlock, BarrierProgram, solve_barrier
from lqgcap.errors import (
    AssumptionViolated,
    DegenerateSolution,
    DimensionMismatch,
    Infeasible,
    NotPD,
)
from lqgcap.linalg import min_eig
from lqgcap.upper_bound import UBProgram


class TestRateFromPsi:
    def test_equal_covariances_give_zero(self):
        psi = np.array([[2.0, 0.3], [0.3, 1.0]])
        assert rate_from_psi(psi, psi) == 0.0

    def test_euler_ratio_gives_half_nat(self):
        assert rate_from_psi(np.e, 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_doubling_gives_half_bit(self):
        assert rate_from_psi(2.0, 1.0, units="bits") == pytest.approx(0.5, abs=1e-12)

    def test_not_pd_raises(self):
        with pytest.raises(NotPD):
            rate_from_psi(-1.0, 1.0)


class TestFeasibility:
    def test_budget_below_floor_infeasible(self, s1, w1, c1):
        res = feasibility(BudgetedProblem(s1, w1, 1.0), c1)
        assert not res.feasible
        with pytest.raises(Infeasible):
            solve_ub(BudgetedProblem(s1, w1, 1.0), consts=c1)

    def test_boundary_budget(self, s1, w1, c1):
        res = feasibility(BudgetedProblem(s1, w1, c1.minimal_cost), c1)
        assert res.feasible and res.boundary
        sol = solve_ub(BudgetedProblem(s1, w1, c1.minimal_cost), consts=c1)
        assert sol.rate == pytest.approx(0.0, abs=1e-8)
        assert sol.cost == pytest.approx(c1.minimal_cost)

    def test_strict_point_verified(self, s1, w1, c1):
        res = feasibility(BudgetedProblem(s1, w1, 2.0), c1)
        assert res.strict
        prog = UBProgram(c1, 2.0)
        slacks = prog.barrier_program().min_slacks(prog.pack(res.point))
        assert min(slacks) > 0
        assert prog.cost(prog.pack(res.point)) < 2.0

    def test_strict_point_vector(self, s2, w2, c2):
        p = 1.2 * c2.minimal_cost
        res = feasibility(BudgetedProblem(s2, w2, p), c2)
        assert res.strict
        prog = UBProgram(c2, p)
        assert min(prog.barrier_program().min_slacks(prog.pack(res.point))) > 0


class TestSolveUB:
    def test_matches_bruteforce_oracle(self, s1, w1, c1, s1_oracle):
        for p, ref in s1_oracle.items():
            sol = solve_ub(BudgetedProblem(s1, w1, p), consts=c1)
            assert sol.rate == pytest.approx(ref["rate_nats"], abs=1e-5)

    def test_solution_feasibility_invariants(self, s1, w1, c1):
        for p in (1.35, 2.0, 3.5):
            sol = solve_ub(BudgetedProblem(s1, w1, p), consts=c1)
            dec = sol.decision
            assert min_eig(dec.first_lmi()) >= -1e-8
            assert sol.riccati_lmi_slack >= -1e-8
            assert sol.cost <= p + 1e-8 * max(1.0, p)
            assert sol.rate >= -1e-9

    def test_monotone_and_midpoint_concave(self, s1, w1, c1):
        grid = np.linspace(1.4, 3.2, 7)
        vals = [solve_ub(BudgetedProblem(s1, w1, float(p)), consts=c1).rate
                for p in grid]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
        for lo, mid, hi in zip(vals, vals[1:], vals[2:]):
            assert mid >= 0.5 * (lo + hi) - 1e-7

    def test_affine_kky_definitions_hold(self, s2, w2, c2):
        p = 1.5 * c2.minimal_cost
        sol = solve_ub(BudgetedProblem(s2, w2, p), consts=c2)
        d = sol.decision
        psi_y = (s2.J @ d.Pi @ s2.J.T + s2.H @ d.SigmaHat @ s2.H.T
                 + s2.H @ d.Gamma.T @ s2.J.T + s2.J @ d.Gamma @ s2.H.T + c2.Psi)
        assert np.allclose(sol.Psi_Y, psi_y, atol=1e-10)
        kypsi = (s2.F @ d.Gamma.T @ s2.J.T + s2.F @ d.SigmaHat @ s2.H.T
                 + s2.G @ d.Pi @ s2.J.T + s2.G @ d.Gamma @ s2.H.T
                 + c2.K_p @ c2.Psi)
        assert np.allclose(sol.K_Y @ sol.Psi_Y, kypsi, atol=1e-8)


class TestSpecialCases:
    def test_power_constraint_reduction(self, s1, c1):
        """With Q = 0 the five-term cost collapses to Tr(Pi R) <= p and the
        program matches an independently built power-constrained variant."""
        weights = CostWeights(Q=0, R=1)
        consts = ProblemConstants.compute(s1, weights)
        p = 2.0
        prog = UBProgram(consts, p)
        # cost coefficients: only the Pi slot survives
        pi_dim = prog.pi_pack.dim
        assert np.all(np.abs(prog.cost_coeffs[pi_dim:]) <= 1e-12)
        assert consts.minimal_cost <= 1e-12

        full = solve_ub(BudgetedProblem(s1, weights, p), consts=consts)

        # independent construction: same LMIs, cost replaced by Tr(Pi R) <= p
        base = prog.barrier_program()
        cost = np.zeros(prog.dim)
        for j, b in enumerate(prog.pi_pack.basis()):
            cost[j] = np.trace(b @ weights.R)
        power = BarrierProgram(
            objective=base.objective,
            constraints=[base.constraints[0], base.constraints[1],
                         AffineBlock(np.array([[p]]), (-cost).reshape(-1, 1, 1))])
        feas = feasibility(BudgetedProblem(s1, weights, p), consts)
        v, info = solve_barrier(power, prog.pack(feas.point), 1e-10)
        assert prog.rate(v) == pytest.approx(full.rate, abs=1e-6)

    def test_state_feedback_collapse(self, state_feedback_model, w1):
        consts = ProblemConstants.compute(state_feedback_model, w1)
        assert consts.Sigma[0, 0] == pytest.approx(0.0, abs=1e-11)
        assert np.allclose(state_feedback_model.G,
                           consts.K_p @ state_feedback_model.J, atol=1e-10)
        p = consts.minimal_cost + 1.0
        sol = solve_ub(BudgetedProblem(state_feedback_model, w1, p),
                       consts=consts)
        assert sol.decision.SigmaHat[0, 0] == 0.0
        assert sol.decision.Gamma[0, 0] == 0.0
        # closed form: objective increasing in Pi, so the cost is saturated
        pi_star = 1.0 / consts.Psi_LQR[0, 0]
        rate_ref = 0.5 * np.log(
            (pi_star + consts.Psi[0, 0]) / consts.Psi[0, 0])
        assert sol.rate == pytest.approx(rate_ref, abs=1e-7)
        assert sol.Psi_Y[0, 0] == pytest.approx(
            sol.decision.Pi[0, 0] + consts.Psi[0, 0], abs=1e-10)


class TestSolveScalar:
    def test_rejects_vector_problem(self, s2, w2):
        with pytest.raises(DimensionMismatch):
            solve_scalar(BudgetedProblem(s2, w2, 100.0))

    def test_guard_h_equals_klqr_j(self):
        # F = 0 gives K_LQR = 0; with H = 0 the guard H = K_LQR J trips
        from lqgcap import SystemModel
        model = SystemModel(F=0, G=1, H=0, J=1, W=1, V=1, L=0)
        weights = CostWeights(Q=1, R=1)
        with pytest.raises(AssumptionViolated):
            solve_scalar(BudgetedProblem(model, weights, 2.0))

    def test_state_feedback_dispatch(self, state_feedback_model, w1):
        consts = ProblemConstants.compute(state_feedback_model, w1)
        sol = solve_scalar(BudgetedProblem(state_feedback_model, w1,
                                           consts.minimal_cost + 1.0),
                           consts=consts)
        assert sol.capacity_exact
        assert sol.decision.SigmaHat[0, 0] == 0.0

    def test_capacity_zero_at_cost_floor(self, s1, w1, c1):
        sol = solve_scalar(BudgetedProblem(s1, w1, c1.minimal_cost), consts=c1)
        assert sol.capacity_exact
        assert sol.rate == pytest.approx(0.0, abs=1e-8)

    def test_sweep_nondecreasing_from_zero(self, s1, w1, c1):
        jstar = c1.minimal_cost
        grid = np.linspace(jstar, 3 * jstar, 8)
        vals = [solve_scalar(BudgetedProblem(s1, w1, float(p)), consts=c1).rate
                for p in grid]
        assert vals[0] == pytest.approx(0.0, abs=1e-8)
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_extracted_dither_vanishes_on_s1(self, s1, w1, c1):
        for p in (1.5, 2.5, 4.0):
            sol = solve_scalar(BudgetedProblem(s1, w1, p), consts=c1)
            d = sol.decision
            m_val = d.Pi[0, 0] - d.Gamma[0, 0] ** 2 / d.SigmaHat[0, 0]
            assert abs(m_val) <= 1e-6

    def test_dither_positive_for_large_gain(self, s1, w1):
        from lqgcap import SystemModel
        model = SystemModel(F=0.5, G=2.8, H=1, J=1, W=1, V=1, L=0)
        sol = solve_scalar(BudgetedProblem(model, w1, 5.0))
        d = sol.decision
        m_val = d.Pi[0, 0] - d.Gamma[0, 0] ** 2 / d.SigmaHat[0, 0]
        assert m_val > 1e-3


class TestScalarKKT:
    def test_kkt_at_budget_two(self, s1, w1, c1):
        prob = BudgetedProblem(s1, w1, 2.0)
        sol = solve_scalar(prob, consts=c1)
        kkt = verify_scalar_kkt(prob, sol, c1)
        assert abs(kkt.g3_value) <= 1e-6
        assert np.max(np.abs(kkt.slackness_residuals)) <= 1e-6
        assert np.max(np.abs(kkt.stationarity_residuals)) <= 1e-5
        assert kkt.lambda2 > 0          # the cost constraint is active
        for lam in (kkt.lambda2, kkt.lambda3, kkt.lambda4, kkt.lambda5):
            assert lam >= -1e-8

    def test_boundary_solution_degenerate(self, s1, w1, c1):
        prob = BudgetedProblem(s1, w1, c1.minimal_cost)
        sol = solve_scalar(prob, consts=c1)
        with pytest.raises(DegenerateSolution):
            verify_scalar_kkt(prob, sol, c1)


def test_solver_options_tolerance_scaling(s1, w1, c1):
    loose = solve_ub(BudgetedProblem(s1, w1, 2.0),
                     SolverOptions(tol=1e-6), consts=c1)
    tight = solve_ub(BudgetedProblem(s1, w1, 2.0),
                     SolverOptions(tol=1e-10), consts=c1)
    assert loose.duality_gap > tight.duality_gap
    assert abs(loose.rate - tight.rate) <= 2 * loose.duality_gap
