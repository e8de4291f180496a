"""Finite-horizon sequential convex program and its averaging argument.

The horizon-n program optimizes per-time triples (Pi_i, Gamma_i,
SigmaHat_{i+1}) chained by Riccati LMIs, with time-varying LQR constants from
the backward recursion and a terminal correction term in the cost.  Averaging
the per-time variables produces a point feasible for the single-letter
program up to an O(1/n) correction, which is what makes the single-letter
bound the horizon limit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import linalg as la
from .barrier import AffineBlock, BarrierProgram, SymPacker, solve_barrier
from .constants import ProblemConstants
from .errors import Infeasible
from .model import BudgetedProblem
from .riccati import Policy, _policy_step
from .upper_bound import UBDecision, UBProgram

log = logging.getLogger("lqgcap.scop")

MAX_HORIZON_SCALAR = 64
MAX_HORIZON_VECTOR = 16
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class SCOPSolution:
    horizon: int
    per_time: list            # n triples (Pi_i, Gamma_i, SigmaHat_{i+1})
    value: float               # nats per step
    slack_E_n: float           # terminal correction term in the cost
    cost: float                # left-hand side of the cost constraint
    duality_gap: float = 0.0
    iterations: int = 0
    relaxation: float = 0.0    # PSD slack added to the chained LMIs (k > m)
    consts: ProblemConstants | None = None
    budget: float = 0.0

    @property
    def sigma_hats(self) -> list[np.ndarray]:
        """SigmaHat_1 .. SigmaHat_{n+1} (the first is pinned at zero)."""
        k = self.per_time[0][2].shape[0]
        return [np.zeros((k, k))] + [trip[2] for trip in self.per_time]


@dataclass(frozen=True)
class AveragedVariables:
    Pi: np.ndarray
    Gamma: np.ndarray
    SigmaHat: np.ndarray
    lmi1_min_eig: float
    lmi2_min_eig: float
    cost_value: float          # single-letter cost at the averages
    cost_excess: float         # max(0, cost_value - budget)
    cost_epsilon: float        # |budget - cost_value|, the eps'_n correction
    correction_norm: float     # ||SigmaHat_{n+1} - SigmaHat_1||_F / n
    slack: float               # max of the averaging corrections/violations


def _lqr_schedule(consts: ProblemConstants, n: int):
    """Backward recursion from E_{n+1} = Q; returns (E[1..n+1], K[1..n],
    PsiL[1..n]) as 1-indexed lists (index 0 unused)."""
    F, G = consts.model.F, consts.model.G
    Q, R = consts.weights.Q, consts.weights.R
    E = [None] * (n + 2)
    K = [None] * (n + 1)
    PsiL = [None] * (n + 1)
    E[n + 1] = Q.copy()
    for i in range(n, 0, -1):
        PsiL[i] = la.sym(R + G.T @ E[i + 1] @ G)
        K[i] = np.linalg.solve(PsiL[i], G.T @ E[i + 1] @ F)
        E[i] = la.sym(F.T @ E[i + 1] @ F + Q - K[i].T @ PsiL[i] @ K[i])
    return E, K, PsiL


class SCOPProgram:
    """Stacked affine assembly of the horizon-n program."""

    def __init__(self, consts: ProblemConstants, budget: float, horizon: int,
                 relaxation: float = 0.0):
        self.consts = consts
        self.budget = float(budget)
        self.n = horizon
        self.relaxation = relaxation
        m, k = consts.model.m, consts.model.k
        self.pi_pack = SymPacker(m)
        self.sig_pack = SymPacker(k)
        self.n_gamma = m * k
        # slot offsets: Pi_1..Pi_n, Gamma_2..Gamma_n, SigmaHat_2..SigmaHat_{n+1}
        n = self.n
        self.pi_off = [None] + [i * self.pi_pack.dim for i in range(n)]
        base = n * self.pi_pack.dim
        self.gam_off = [None, None] + [base + i * self.n_gamma
                                       for i in range(n - 1)]
        base += (n - 1) * self.n_gamma
        self.sig_off = [None, None] + [base + i * self.sig_pack.dim
                                       for i in range(n)]
        self.dim = base + n * self.sig_pack.dim
        self.E, self.K, self.PsiL = _lqr_schedule(consts, n)
        self._build()

    # -- constants ---------------------------------------------------------

    def cost_constant(self) -> float:
        c = self.consts
        kp_term = sum(float(np.trace(c.K_p @ c.Psi @ c.K_p.T @ self.E[i + 1]))
                      for i in range(1, self.n + 1)) / self.n
        sigma_q = float(np.trace(c.Sigma @ c.weights.Q))
        return kp_term + sigma_q * (self.n + 1) / self.n

    def slack_e_n(self, sigma_last: np.ndarray) -> float:
        """Terminal correction: (1/n)(Tr((Sigma + SigmaHat_{n+1}) Q)
        + Tr(cov 0 * E_1) + Tr(0*E_1 - SigmaHat_{n+1} E_{n+1}))."""
        c = self.consts
        return float(np.trace((c.Sigma + sigma_last) @ c.weights.Q)
                     - np.trace(sigma_last @ self.E[self.n + 1])) / self.n

    # -- packing -----------------------------------------------------------

    def pack(self, pis, gammas, sigmas) -> np.ndarray:
        """pis[1..n], gammas[2..n], sigmas[2..n+1] as 1-indexed lists."""
        v = np.zeros(self.dim)
        for i in range(1, self.n + 1):
            v[self.pi_off[i]:self.pi_off[i] + self.pi_pack.dim] = \
                self.pi_pack.pack(pis[i])
        for i in range(2, self.n + 1):
            v[self.gam_off[i]:self.gam_off[i] + self.n_gamma] = \
                gammas[i].reshape(-1)
        for i in range(2, self.n + 2):
            v[self.sig_off[i]:self.sig_off[i] + self.sig_pack.dim] = \
                self.sig_pack.pack(sigmas[i])
        return v

    def unpack(self, v: np.ndarray):
        m, k = self.consts.model.m, self.consts.model.k
        pis = [None] + [self.pi_pack.unpack(
            v[self.pi_off[i]:self.pi_off[i] + self.pi_pack.dim])
            for i in range(1, self.n + 1)]
        gammas = [None, np.zeros((m, k))] + [
            v[self.gam_off[i]:self.gam_off[i] + self.n_gamma].reshape(m, k)
            for i in range(2, self.n + 1)]
        sigmas = [None, np.zeros((k, k))] + [
            self.sig_pack.unpack(v[self.sig_off[i]:self.sig_off[i]
                                   + self.sig_pack.dim])
            for i in range(2, self.n + 2)]
        return pis, gammas, sigmas

    # -- blocks ------------------------------------------------------------

    def _build(self):
        c = self.consts
        F, G, H, J = c.model.F, c.model.G, c.model.H, c.model.J
        K_p, Psi = c.K_p, c.Psi
        m, k, p = c.model.m, c.model.k, c.model.p
        n, D = self.n, self.dim
        KpPsi = K_p @ Psi

        cost = np.zeros(D)
        constraints = []
        objective = []

        def pi_slots(i):
            off = self.pi_off[i]
            for t, b in enumerate(self.pi_pack.basis()):
                yield off + t, b

        def gam_slots(i):
            off = self.gam_off[i]
            for t in range(self.n_gamma):
                b = np.zeros(m * k)
                b[t] = 1.0
                yield off + t, b.reshape(m, k)

        def sig_slots(i):
            off = self.sig_off[i]
            for t, b in enumerate(self.sig_pack.basis()):
                yield off + t, b

        # Pi_1 >= 0 (SigmaHat_1 = 0 forces Gamma_1 = 0, shrinking the first
        # covariance LMI to Pi alone)
        basis = np.zeros((D, m, m))
        for j, b in pi_slots(1):
            basis[j] = b
        constraints.append(AffineBlock(np.zeros((m, m)), basis))

        # covariance LMIs for i = 2..n
        for i in range(2, n + 1):
            basis = np.zeros((D, m + k, m + k))
            for j, b in pi_slots(i):
                basis[j, :m, :m] = b
            for j, b in gam_slots(i):
                basis[j, :m, m:] = b
                basis[j, m:, :m] = b.T
            for j, b in sig_slots(i):
                basis[j, m:, m:] = b
            constraints.append(AffineBlock(np.zeros((m + k, m + k)), basis))

        # terminal SigmaHat_{n+1} >= 0
        basis = np.zeros((D, k, k))
        for j, b in sig_slots(n + 1):
            basis[j] = b
        constraints.append(AffineBlock(np.zeros((k, k)), basis))

        # chained Riccati LMIs for i = 1..n
        for i in range(1, n + 1):
            basis = np.zeros((D, k + p, k + p))
            for j, b in pi_slots(i):
                dA = G @ b @ G.T
                dC = G @ b @ J.T
                dP = J @ b @ J.T
                basis[j, :k, :k] = dA
                basis[j, :k, k:] = dC
                basis[j, k:, :k] = dC.T
                basis[j, k:, k:] = dP
            if i >= 2:
                for j, b in gam_slots(i):
                    dA = F @ b.T @ G.T + G @ b @ F.T
                    dC = F @ b.T @ J.T + G @ b @ H.T
                    dP = H @ b.T @ J.T + J @ b @ H.T
                    basis[j, :k, :k] = dA
                    basis[j, :k, k:] = dC
                    basis[j, k:, :k] = dC.T
                    basis[j, k:, k:] = dP
                for j, b in sig_slots(i):
                    dA = F @ b @ F.T
                    dC = F @ b @ H.T
                    dP = H @ b @ H.T
                    basis[j, :k, :k] = dA
                    basis[j, :k, k:] = dC
                    basis[j, k:, :k] = dC.T
                    basis[j, k:, k:] = dP
            for j, b in sig_slots(i + 1):
                basis[j, :k, :k] = basis[j, :k, :k] - b
            const = np.zeros((k + p, k + p))
            const[:k, :k] = KpPsi @ K_p.T + self.relaxation * np.eye(k)
            const[:k, k:] = KpPsi
            const[k:, :k] = KpPsi.T
            const[k:, k:] = Psi
            constraints.append(AffineBlock(const, basis))

            # per-time objective: (1/(2n)) logdet Psi_Y,i
            psiy = np.zeros((D, p, p))
            for j, b in pi_slots(i):
                psiy[j] = J @ b @ J.T
            if i >= 2:
                for j, b in gam_slots(i):
                    psiy[j] = H @ b.T @ J.T + J @ b @ H.T
                for j, b in sig_slots(i):
                    psiy[j] = H @ b @ H.T
            objective.append((0.5 / n, AffineBlock(Psi.copy(), psiy)))

            # per-time cost coefficients
            KtP = self.K[i].T @ self.PsiL[i]
            for j, b in pi_slots(i):
                cost[j] += float(np.trace(b @ self.PsiL[i])) / n
            if i >= 2:
                for j, b in gam_slots(i):
                    cost[j] += 2.0 * float(np.trace(b @ KtP)) / n
                for j, b in sig_slots(i):
                    cost[j] += float(np.trace(b @ KtP @ self.K[i])) / n
        # SigmaHat_{n+1} terms of the terminal correction (zero because the
        # terminal weight equals Q, kept for fidelity to the formula)
        dterm = (self.consts.weights.Q - self.E[n + 1]) / n
        for j, b in sig_slots(n + 1):
            cost[j] += float(np.trace(b @ dterm))

        slack0 = self.budget - self.cost_constant()
        constraints.append(AffineBlock(np.array([[slack0]]),
                                       (-cost).reshape(D, 1, 1)))
        self.cost_coeffs = cost
        self._constraints = constraints
        self._objective = objective

    def barrier_program(self) -> BarrierProgram:
        return BarrierProgram(objective=self._objective,
                              constraints=self._constraints)

    def cost(self, v: np.ndarray) -> float:
        return float(self.cost_coeffs @ v) + self.cost_constant()

    def value(self, v: np.ndarray) -> float:
        total = 0.0
        for w, blk in self._objective:
            total += w * la.slogdet_pd(blk.value(v), "Psi_Y,i")
        return total - 0.5 * la.slogdet_pd(self.consts.Psi, "Psi")


def _strict_chain(consts: ProblemConstants, eps: float, n: int,
                  relaxation: float):
    """Damped propagation SigmaHat_{i+1} = (T(SigmaHat_i) + relax I)/2 keeps
    every chained LMI slack above half its own value."""
    est = consts.estimator
    m, k = est.m, est.k
    pol = Policy(GammaBar=np.zeros((m, k)), M=eps * np.eye(m),
                 K_LQR=consts.K_LQR)
    sigmas = [None, np.zeros((k, k))]
    for _ in range(n):
        nxt = la.sym(0.5 * (_policy_step(est, pol, sigmas[-1], pol.M)
                            + relaxation * np.eye(k)))
        sigmas.append(nxt)
    pis = [None] + [eps * np.eye(m) for _ in range(n)]
    gammas = [None, None] + [np.zeros((m, k)) for _ in range(n - 1)]
    return pis, gammas, sigmas


def solve_scop(problem: BudgetedProblem, horizon: int,
               tol: float = 1e-7, max_iter: int = 50_000,
               consts: ProblemConstants | None = None) -> SCOPSolution:
    """Solve the horizon-n program with the shared barrier engine.

    For k > m the chained LMIs have no strict interior at early times (the
    one-step noise reaches only an m-dimensional slice), so a tiny PSD
    relaxation is added to make the stacked barrier runnable; it is reported
    in the solution and zero in the scalar case.
    """
    if consts is None:
        consts = ProblemConstants.for_problem(problem)
    k, m = consts.model.k, consts.model.m
    cap = MAX_HORIZON_SCALAR if consts.model.is_scalar() else MAX_HORIZON_VECTOR
    if not 1 <= horizon <= cap:
        raise ValueError(f"horizon must be in [1, {cap}] for k={k}")
    relaxation = 0.0 if k <= m else 1e-9 * (1.0 + float(np.trace(
        consts.K_p @ consts.Psi @ consts.K_p.T)))
    prog = SCOPProgram(consts, problem.budget, horizon, relaxation)
    const_cost = prog.cost_constant()
    if problem.budget < const_cost - BOUNDARY_TOL:
        raise Infeasible(
            f"budget {problem.budget} below the horizon-{horizon} cost floor "
            f"{const_cost:.9g}")
    if problem.budget <= const_cost + BOUNDARY_TOL:
        zero_triples = [(np.zeros((m, m)), np.zeros((m, k)), np.zeros((k, k)))
                        for _ in range(horizon)]
        return SCOPSolution(horizon=horizon, per_time=zero_triples, value=0.0,
                            slack_E_n=prog.slack_e_n(np.zeros((k, k))),
                            cost=const_cost, consts=consts,
                            budget=problem.budget)

    eps = (problem.budget - const_cost) / (2.0 * (float(np.trace(consts.Psi_LQR)) + 1.0))
    v0 = None
    for _ in range(200):
        pis, gammas, sigmas = _strict_chain(consts, eps, horizon, relaxation)
        v = prog.pack(pis, gammas, sigmas)
        if prog.cost(v) < problem.budget and prog.barrier_program().feasible(v):
            v0 = v
            break
        eps *= 0.25
    if v0 is None:
        raise Infeasible("no strictly feasible chain found")
    v, info = solve_barrier(prog.barrier_program(), v0, tol, max_iter)
    pis, gammas, sigmas = prog.unpack(v)
    per_time = [(pis[i], gammas[i], sigmas[i + 1])
                for i in range(1, horizon + 1)]
    return SCOPSolution(
        horizon=horizon,
        per_time=per_time,
        value=prog.value(v),
        slack_E_n=prog.slack_e_n(sigmas[horizon + 1]),
        cost=prog.cost(v),
        duality_gap=info.duality_gap,
        iterations=info.iterations,
        relaxation=relaxation,
        consts=consts,
        budget=problem.budget,
    )


def average_variables(sol: SCOPSolution) -> AveragedVariables:
    """Time-averages of the per-time variables and their single-letter slacks.

    The averaged covariance LMI is an exact average of PSD blocks; the
    averaged Riccati LMI differs from the average of the per-time blocks by
    the rank-limited correction (SigmaHat_{n+1} - SigmaHat_1)/n; the cost is
    checked against the budget with steady-state constants.
    """
    if sol.consts is None:
        raise ValueError("solution carries no problem constants")
    n = sol.horizon
    consts = sol.consts
    pis = [trip[0] for trip in sol.per_time]
    gammas = [trip[1] for trip in sol.per_time]
    sigmas = sol.sigma_hats
    pi_bar = sum(pis) / n
    gam_bar = sum(gammas) / n
    sig_bar = sum(sigmas[:n]) / n     # SigmaHat_1..SigmaHat_n

    prog = UBProgram(consts, sol.budget if sol.budget else 1.0)
    dec = UBDecision(Pi=pi_bar, Gamma=gam_bar, SigmaHat=sig_bar)
    v = prog.pack(dec)
    lmi1 = la.min_eig(prog.block_lmi1.value(v))
    lmi2 = la.min_eig(prog.block_lmi2.value(v))
    cost_val = prog.cost(v)
    cost_excess = max(0.0, cost_val - sol.budget)
    cost_eps = abs(sol.budget - cost_val)
    corr = float(np.linalg.norm(sigmas[n] - sigmas[0])) / n
    slack = max(max(0.0, -lmi1), max(0.0, -lmi2), cost_eps, corr)
    return AveragedVariables(
        Pi=pi_bar, Gamma=gam_bar, SigmaHat=sig_bar,
        lmi1_min_eig=lmi1, lmi2_min_eig=lmi2,
        cost_value=cost_val, cost_excess=cost_excess, cost_epsilon=cost_eps,
        correction_norm=corr, slack=slack,
    )
