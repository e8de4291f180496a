"""Convex upper bound on the LQG system capacity, and its scalar exact form.

The program maximizes (1/2) log det(Psi_Y) - (1/2) log det(Psi) over
decision matrices (Pi, Gamma, SigmaHat) subject to the trace cost constraint,
the covariance block LMI [[Pi, Gamma], [Gamma^T, SigmaHat]] >= 0, and the
relaxed-Riccati LMI tying SigmaHat to its one-step propagation.  Psi_Y and
K_Y*Psi_Y are affine in the decisions, so the whole program is a
determinant-maximization problem solved by the barrier engine.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .barrier import AffineBlock, BarrierProgram, SymPacker, solve_barrier
from .constants import ProblemConstants
from .errors import (
    AssumptionViolated,
    DegenerateSolution,
    DimensionMismatch,
    Infeasible,
    SolverNonConvergence,
)
from .model import BudgetedProblem

log = logging.getLogger("lqgcap.ub")

LN2 = math.log(2.0)

# Budgets within this absolute band of the minimal cost have no interior;
# the zero-rate solution is returned instead of running the barrier.
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 5e-11
    max_iter: int = 50_000


@dataclass(frozen=True)
class UBDecision:
    """Decision triple of the upper-bound program."""

    Pi: np.ndarray
    Gamma: np.ndarray
    SigmaHat: np.ndarray

    @classmethod
    def zero(cls, k: int, m: int) -> "UBDecision":
        return cls(Pi=np.zeros((m, m)), Gamma=np.zeros((m, k)),
                   SigmaHat=np.zeros((k, k)))

    def first_lmi(self) -> np.ndarray:
        return np.block([[self.Pi, self.Gamma], [self.Gamma.T, self.SigmaHat]])


@dataclass(frozen=True)
class UBSolution:
    decision: UBDecision
    Psi_Y: np.ndarray
    K_Y: np.ndarray
    rate: float            # nats per step
    cost: float            # budget units
    duality_gap: float
    iterations: int
    riccati_lmi_slack: float
    capacity_exact: bool = False


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    boundary: bool = False
    point: UBDecision | None = None
    detail: str = ""

    @property
    def strict(self) -> bool:
        return self.feasible and not self.boundary and self.point is not None


@dataclass(frozen=True)
class KKTReport:
    """Recovered multipliers and residuals of the scalar stationarity system."""

    lambda2: float
    lambda3: float
    lambda4: float
    lambda5: float
    stationarity_residuals: np.ndarray
    slackness_residuals: np.ndarray   # (l2*g2, l3*g3, l4*SigmaHat, l5*g5)
    g3_value: float
    constraint_values: dict = field(default_factory=dict)


def rate_from_psi(Psi_Y: np.ndarray, Psi: np.ndarray, units: str = "nats") -> float:
    """(1/2)(log det Psi_Y - log det Psi), in nats or bits."""
    val = 0.5 * (la.slogdet_pd(la.as_matrix(Psi_Y), "Psi_Y")
                 - la.slogdet_pd(la.as_matrix(Psi), "Psi"))
    if units == "nats":
        return val
    if units == "bits":
        return val / LN2
    raise ValueError(f"unknown units {units!r}")


class UBProgram:
    """Affine assembly of the upper-bound program for the barrier engine."""

    def __init__(self, consts: ProblemConstants, budget: float):
        self.consts = consts
        self.budget = float(budget)
        m, k, p = consts.model.m, consts.model.k, consts.model.p
        self.pi_pack = SymPacker(m)
        self.sig_pack = SymPacker(k)
        self.n_gamma = m * k
        self.dim = self.pi_pack.dim + self.n_gamma + self.sig_pack.dim
        self._build()

    # -- packing ---------------------------------------------------------

    def pack(self, dec: UBDecision) -> np.ndarray:
        return np.concatenate([
            self.pi_pack.pack(dec.Pi),
            dec.Gamma.reshape(-1),
            self.sig_pack.pack(dec.SigmaHat),
        ])

    def unpack(self, v: np.ndarray) -> UBDecision:
        m, k = self.consts.model.m, self.consts.model.k
        a = self.pi_pack.dim
        b = a + self.n_gamma
        return UBDecision(
            Pi=self.pi_pack.unpack(v[:a]),
            Gamma=v[a:b].reshape(m, k),
            SigmaHat=self.sig_pack.unpack(v[b:]),
        )

    def _basis_triples(self):
        """Yield (dPi, dGamma, dSigmaHat) for each decision coordinate."""
        m, k = self.consts.model.m, self.consts.model.k
        zpi = np.zeros((m, m))
        zg = np.zeros((m, k))
        zs = np.zeros((k, k))
        for bp in self.pi_pack.basis():
            yield bp, zg, zs
        for idx in range(self.n_gamma):
            g = np.zeros(m * k)
            g[idx] = 1.0
            yield zpi, g.reshape(m, k), zs
        for bs in self.sig_pack.basis():
            yield zpi, zg, bs

    # -- affine pieces -----------------------------------------------------

    def _build(self):
        c = self.consts
        F, G, H, J = c.model.F, c.model.G, c.model.H, c.model.J
        K_p, Psi = c.K_p, c.Psi
        m, k, p = c.model.m, c.model.k, c.model.p
        D = self.dim

        lmi1 = np.zeros((D, m + k, m + k))
        lmi2 = np.zeros((D, k + p, k + p))
        psiy = np.zeros((D, p, p))
        cost = np.zeros(D)
        KtPsiL = c.K_LQR.T @ c.Psi_LQR
        for j, (dPi, dGam, dSig) in enumerate(self._basis_triples()):
            lmi1[j, :m, :m] = dPi
            lmi1[j, :m, m:] = dGam
            lmi1[j, m:, :m] = dGam.T
            lmi1[j, m:, m:] = dSig
            dA = (F @ dSig @ F.T + F @ dGam.T @ G.T + G @ dGam @ F.T
                  + G @ dPi @ G.T - dSig)
            dC = F @ dGam.T @ J.T + F @ dSig @ H.T + G @ dPi @ J.T + G @ dGam @ H.T
            dPsiY = (J @ dPi @ J.T + H @ dSig @ H.T + H @ dGam.T @ J.T
                     + J @ dGam @ H.T)
            lmi2[j, :k, :k] = dA
            lmi2[j, :k, k:] = dC
            lmi2[j, k:, :k] = dC.T
            lmi2[j, k:, k:] = dPsiY
            psiy[j] = dPsiY
            cost[j] = float(np.trace(dSig @ KtPsiL @ c.K_LQR)
                            + np.trace(dPi @ c.Psi_LQR)
                            + 2.0 * np.trace(dGam @ KtPsiL))

        KpPsi = K_p @ Psi
        lmi2_0 = np.block([[KpPsi @ K_p.T, KpPsi], [KpPsi.T, Psi]])
        self.block_lmi1 = AffineBlock(np.zeros((m + k, m + k)), lmi1)
        self.block_lmi2 = AffineBlock(lmi2_0, lmi2)
        self.block_psiy = AffineBlock(Psi.copy(), psiy)
        slack0 = self.budget - c.minimal_cost
        self.block_cost = AffineBlock(np.array([[slack0]]),
                                      (-cost).reshape(D, 1, 1))
        self.cost_coeffs = cost

    def barrier_program(self) -> BarrierProgram:
        return BarrierProgram(
            objective=[(0.5, self.block_psiy)],
            constraints=[self.block_lmi1, self.block_lmi2, self.block_cost],
        )

    # -- evaluation --------------------------------------------------------

    def psi_y(self, v: np.ndarray) -> np.ndarray:
        return la.sym(self.block_psiy.value(v))

    def ky_psi_y(self, v: np.ndarray) -> np.ndarray:
        k = self.consts.model.k
        return self.block_lmi2.value(v)[:k, k:]

    def rate(self, v: np.ndarray) -> float:
        return rate_from_psi(self.psi_y(v), self.consts.Psi)

    def cost(self, v: np.ndarray) -> float:
        return float(self.cost_coeffs @ v) + self.consts.minimal_cost

    def solution_from(self, v: np.ndarray, info) -> UBSolution:
        c = self.consts
        dec = self.unpack(v)
        PsiY = self.psi_y(v)
        # K_Y from the affine product K_Y Psi_Y by a PD solve, never an inverse
        K_Y = la.solve_pd(PsiY, self.ky_psi_y(v).T).T
        k = c.model.k
        A = la.sym(self.block_lmi2.value(v)[:k, :k])
        schur = la.sym(A - K_Y @ PsiY @ K_Y.T)
        return UBSolution(
            decision=dec,
            Psi_Y=PsiY,
            K_Y=K_Y,
            rate=self.rate(v),
            cost=self.cost(v),
            duality_gap=info.duality_gap,
            iterations=info.iterations,
            riccati_lmi_slack=la.min_eig(schur),
        )


def _zero_solution(consts: ProblemConstants) -> UBSolution:
    m, k, p = consts.model.m, consts.model.k, consts.model.p
    return UBSolution(
        decision=UBDecision.zero(k, m),
        Psi_Y=consts.Psi.copy(),
        K_Y=consts.K_p.copy(),
        rate=0.0,
        cost=consts.minimal_cost,
        duality_gap=0.0,
        iterations=0,
        riccati_lmi_slack=0.0,
    )


def _strict_sigma_hat(consts: ProblemConstants, eps: float) -> np.ndarray | None:
    """A SigmaHat strictly inside the Riccati LMI for the (Gamma=0, M=eps I)
    policy.

    Iterates the damped map X <- T(X)/2, where T is the policy covariance
    propagation.  The damped recursion from 0 is monotone, and any iterate
    X_n = T(X_{n-1})/2 obeys T(X_n) - X_n >= T(X_n)/2 >= X_n by monotonicity
    of T, so the Riccati-LMI slack at X_n dominates X_n itself; X_n is
    returned once it is strictly PD.  Returns None when the iterates stay
    singular (degenerate feedback geometry, e.g. G = K_p J)."""
    from . import riccati as ric

    est = consts.estimator
    pol = ric.Policy(GammaBar=np.zeros((est.m, est.k)),
                     M=eps * np.eye(est.m), K_LQR=consts.K_LQR)
    x = np.zeros((est.k, est.k))
    best = None
    for _ in range(2000):
        x_next = la.sym(0.5 * ric._policy_step(est, pol, x, pol.M))
        done = (float(np.linalg.norm(x_next - x))
                <= 1e-10 * (1.0 + float(np.linalg.norm(x_next))))
        x = x_next
        if la.min_eig(x) > 1e-12 * (1.0 + float(np.linalg.norm(x))):
            best = x
            if done:
                break
        elif done:
            break
    return best


def feasibility(problem: BudgetedProblem,
                consts: ProblemConstants | None = None) -> FeasibilityResult:
    """Classify the budget and, when possible, build a strictly feasible point.

    Budgets below the minimal cost are infeasible; within BOUNDARY_TOL of it
    only the zero-rate point is feasible.  Otherwise the zero-information
    policy with a small isotropic dither gives a strict point, with the dither
    shrunk geometrically until the cost fits and both LMIs are strictly PD.
    """
    if consts is None:
        consts = ProblemConstants.for_problem(problem)
    p = problem.budget
    jstar = consts.minimal_cost
    k, m = consts.model.k, consts.model.m
    if p < jstar - BOUNDARY_TOL:
        return FeasibilityResult(False, detail=f"budget {p} < minimal cost {jstar}")
    if p <= jstar + BOUNDARY_TOL:
        return FeasibilityResult(True, boundary=True,
                                 point=UBDecision.zero(k, m),
                                 detail="budget on the minimal-cost boundary")

    prog = UBProgram(consts, p)
    trace_psi_l = float(np.trace(consts.Psi_LQR))
    eps = (p - jstar) / (2.0 * (trace_psi_l + 1.0))
    for _ in range(200):
        sig = _strict_sigma_hat(consts, eps)
        if sig is None:
            return FeasibilityResult(True, point=None,
                                     detail="no strict interior in SigmaHat "
                                            "(degenerate feedback geometry)")
        dec = UBDecision(Pi=eps * np.eye(m), Gamma=np.zeros((m, k)), SigmaHat=sig)
        v = prog.pack(dec)
        slacks = prog.barrier_program().min_slacks(v)
        if min(slacks) > 0.0 and prog.cost(v) < p:
            return FeasibilityResult(True, point=dec,
                                     detail=f"eps={eps:.3e}, "
                                            f"min slack={min(slacks):.3e}")
        eps *= 0.25
    return FeasibilityResult(True, point=None,
                             detail="strict-point search exhausted")


def _is_state_feedback(consts: ProblemConstants) -> bool:
    G, K_p, J = consts.model.G, consts.K_p, consts.model.J
    return float(np.linalg.norm(G - K_p @ J)) <= 1e-10 * (1.0 + float(np.linalg.norm(G)))


def _solve_state_feedback(consts: ProblemConstants, budget: float,
                          opts: SolverOptions) -> UBSolution:
    """Reduced program when the observer can reconstruct the controller state:
    SigmaHat and Gamma collapse to zero, leaving max log det(J Pi J^T + Psi)
    under Tr(Pi Psi_LQR) <= budget - minimal cost, Pi >= 0."""
    c = consts
    m, k, p = c.model.m, c.model.k, c.model.p
    J = c.model.J
    pack = SymPacker(m)
    D = pack.dim
    basis = pack.basis()
    psiy = np.stack([J @ b @ J.T for b in basis])
    cost = np.array([float(np.trace(b @ c.Psi_LQR)) for b in basis])
    program = BarrierProgram(
        objective=[(0.5, AffineBlock(c.Psi.copy(), psiy))],
        constraints=[
            AffineBlock(np.zeros((m, m)), basis),
            AffineBlock(np.array([[budget - c.minimal_cost]]),
                        (-cost).reshape(D, 1, 1)),
        ],
    )
    eps = (budget - c.minimal_cost) / (2.0 * float(np.trace(c.Psi_LQR)))
    v0 = pack.pack(eps * np.eye(m))
    v, info = solve_barrier(program, v0, opts.tol, opts.max_iter)
    Pi = pack.unpack(v)
    PsiY = la.sym(J @ Pi @ J.T + c.Psi)
    KyPsiY = c.model.G @ Pi @ J.T + c.K_p @ c.Psi
    K_Y = la.solve_pd(PsiY, KyPsiY.T).T
    A = la.sym(c.model.G @ Pi @ c.model.G.T + c.K_p @ c.Psi @ c.K_p.T)
    dec = UBDecision(Pi=Pi, Gamma=np.zeros((m, k)), SigmaHat=np.zeros((k, k)))
    return UBSolution(
        decision=dec,
        Psi_Y=PsiY,
        K_Y=K_Y,
        rate=rate_from_psi(PsiY, c.Psi),
        cost=c.cost_of(Pi, dec.Gamma, dec.SigmaHat),
        duality_gap=info.duality_gap,
        iterations=info.iterations,
        riccati_lmi_slack=la.min_eig(la.sym(A - K_Y @ PsiY @ K_Y.T)),
    )


def solve_ub(problem: BudgetedProblem, opts: SolverOptions | None = None,
             consts: ProblemConstants | None = None) -> UBSolution:
    """Solve the determinant-maximization upper bound at the given budget."""
    if opts is None:
        opts = SolverOptions()
    if consts is None:
        consts = ProblemConstants.for_problem(problem)
    feas = feasibility(problem, consts)
    if not feas.feasible:
        raise Infeasible(feas.detail)
    if feas.boundary:
        return _zero_solution(consts)
    if _is_state_feedback(consts):
        return _solve_state_feedback(consts, problem.budget, opts)
    if feas.point is None:
        raise SolverNonConvergence(f"no strictly feasible start: {feas.detail}")
    prog = UBProgram(consts, problem.budget)
    v0 = prog.pack(feas.point)
    v, info = solve_barrier(prog.barrier_program(), v0, opts.tol, opts.max_iter)
    return prog.solution_from(v, info)


def solve_scalar(problem: BudgetedProblem, opts: SolverOptions | None = None,
                 consts: ProblemConstants | None = None) -> UBSolution:
    """Exact capacity of a scalar system via the same program.

    Guards the standing assumptions: H != K_LQR * J is required, and
    G = K_p * J dispatches to the state-feedback reduction.  The returned
    rate is the capacity itself (capacity_exact set).
    """
    if opts is None:
        opts = SolverOptions()
    if consts is None:
        consts = ProblemConstants.for_problem(problem)
    if not problem.model.is_scalar():
        raise DimensionMismatch("solve_scalar requires k = m = p = 1")
    H = float(consts.model.H[0, 0])
    J = float(consts.model.J[0, 0])
    K_lqr = float(consts.K_LQR[0, 0])
    if abs(H - K_lqr * J) <= 1e-10 * (1.0 + abs(H) + abs(K_lqr * J)):
        raise AssumptionViolated("H = K_LQR * J",
                                 f"H={H}, K_LQR*J={K_lqr * J}")
    sol = solve_ub(problem, opts, consts)
    return UBSolution(**{**sol.__dict__, "capacity_exact": True})


def verify_scalar_kkt(problem: BudgetedProblem, sol: UBSolution,
                      consts: ProblemConstants | None = None) -> KKTReport:
    """Recover the scalar KKT multipliers by least squares and report residuals.

    Uses the reduced constraint set valid for SigmaHat > 0: the cost g2, the
    Riccati Schur complement g3, positivity g4 = SigmaHat, and the dither
    variance g5 = Pi - Gamma^2/SigmaHat.  Raises DegenerateSolution when
    SigmaHat sits at zero (state-feedback face; recovery undefined).
    """
    if consts is None:
        consts = ProblemConstants.for_problem(problem)
    if not problem.model.is_scalar():
        raise DimensionMismatch("verify_scalar_kkt requires k = m = p = 1")
    Pi = float(sol.decision.Pi[0, 0])
    Gam = float(sol.decision.Gamma[0, 0])
    Sig = float(sol.decision.SigmaHat[0, 0])
    if Sig <= 1e-8:
        raise DegenerateSolution(
            f"SigmaHat = {Sig:.3e} is at the state-feedback face")
    F = float(consts.model.F[0, 0])
    G = float(consts.model.G[0, 0])
    H = float(consts.model.H[0, 0])
    J = float(consts.model.J[0, 0])
    Psi = float(consts.Psi[0, 0])
    K_p = float(consts.K_p[0, 0])
    E = float(consts.E[0, 0])
    K_l = float(consts.K_LQR[0, 0])
    PsiL = float(consts.Psi_LQR[0, 0])
    Q = float(consts.weights.Q[0, 0])
    SigmaF = float(consts.Sigma[0, 0])

    psi_y = H * H * Sig + J * J * Pi + 2.0 * H * J * Gam + Psi
    b_num = F * Sig * H + G * J * Pi + (F * J + G * H) * Gam + K_p * Psi
    K_Y = b_num / psi_y
    g2 = (problem.budget - SigmaF * Q - K_p * K_p * Psi * E
          - K_l * K_l * PsiL * Sig - PsiL * Pi - 2.0 * K_l * PsiL * Gam)
    g3 = ((F * F - 1.0) * Sig + 2.0 * F * G * Gam + G * G * Pi
          + K_p * K_p * Psi) - b_num * b_num / psi_y
    g5 = Pi - Gam * Gam / Sig

    a_mat = np.array([
        [-PsiL, (G - K_Y * J) ** 2, 1.0],
        [-2.0 * K_l * PsiL, 2.0 * (G - K_Y * J) * (F - K_Y * H), -2.0 * Gam / Sig],
        [-K_l * K_l * PsiL, (F - K_Y * H) ** 2 - 1.0, Gam * Gam / (Sig * Sig)],
    ])
    rhs = np.array([-J * J, -2.0 * H * J, -H * H])
    lam, *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    l2, l3, l5 = (float(x) for x in lam)
    l4 = 0.0
    stat = a_mat @ lam - rhs
    slack = np.array([l2 * g2, l3 * g3, l4 * Sig, l5 * g5])
    return KKTReport(
        lambda2=l2, lambda3=l3, lambda4=l4, lambda5=l5,
        stationarity_residuals=stat,
        slackness_residuals=slack,
        g3_value=g3,
        constraint_values={"g2": g2, "g3": g3, "g4": Sig, "g5": g5},
    )
