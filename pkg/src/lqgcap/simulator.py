"""Monte-Carlo closed-loop simulation of the plant under a structured policy.

Simulates the true state, the controller's Kalman filter, and the observer's
filter with steady-state gains; the input is
x_i = -K_LQR * (observer estimate) + GammaBar * (estimation error) + dither.
Empirical cost, covariances, rate, and innovation whiteness are accumulated
for comparison against the theoretical values.

Randomness comes from counter-based Philox streams keyed by
(seed, trajectory index), so serial and parallel runs produce bit-identical
reports; Gaussians use numpy's ziggurat sampler (Generator.standard_normal),
which is pinned by the numpy generation contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg as la
from . import riccati
from .errors import NumericalOverflow
from .lower_bound import LBSolution
from .model import CostWeights, SystemModel
from .riccati import Policy

OVERFLOW_LIMIT = 1e12


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    trajectories: int
    seed: int
    burn_in: int | None = None    # defaults to horizon // 10

    def __post_init__(self):
        burn = self.horizon // 10 if self.burn_in is None else self.burn_in
        if not (self.horizon > burn >= 0):
            raise ValueError("need horizon > burn_in >= 0")
        if self.trajectories < 1:
            raise ValueError("need at least one trajectory")
        object.__setattr__(self, "burn_in", burn)


@dataclass(frozen=True)
class SimReport:
    empirical_cost: float
    cost_stderr: float
    empirical_SigmaHat: np.ndarray
    empirical_PsiY: np.ndarray
    empirical_rate: float
    innovation_whiteness: float    # lag-1 autocorrelation norm ratio
    samples: int                   # retained steps x trajectories
    cross_state_err: np.ndarray    # pooled E[(s - s_hat) s_hat^T]
    cross_obs_psi: np.ndarray      # pooled E[(s_hat_i - s_obs_i) psi_{i-1}^T]
    state_err_scale: float         # rms scales for the cross-moment checks
    shat_scale: float
    obs_err_scale: float
    psi_scale: float


@dataclass(frozen=True)
class SimCheck:
    name: str
    value: float
    target: float
    tol: float
    ok: bool


@dataclass(frozen=True)
class ComparisonVerdict:
    checks: tuple[SimCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def __str__(self) -> str:
        lines = [f"[{'PASS' if c.ok else 'FAIL'}] {c.name}: value={c.value:.6g} "
                 f"target={c.target:.6g} tol={c.tol:.3g}" for c in self.checks]
        return "\n".join(lines)


@dataclass(frozen=True)
class SimTolerances:
    cost_sigmas: float = 3.0
    psi_y_rel: float = 0.03
    rate_rel: float = 0.03
    rate_floor: float = 5e-3       # absolute slack when the rate is near zero


def _traj_noise(seed: int, idx: int, n: int, k: int, p: int, m: int):
    """Standard-normal draws for one trajectory from its own Philox stream."""
    gen = np.random.Generator(np.random.Philox(key=np.array(
        [seed % (1 << 64), idx], dtype=np.uint64)))
    z_s1 = gen.standard_normal(k)
    z_wv = gen.standard_normal((n, k + p))
    z_m = gen.standard_normal((n, m))
    return z_s1, z_wv, z_m


def simulate(model: SystemModel, weights: CostWeights, policy: Policy,
             cfg: SimConfig) -> SimReport:
    """Run the closed loop and report empirical statistics.

    Steady-state gains are used from the first step; the configured burn-in
    lets the state transients decay before statistics accumulate.
    """
    from .model import reduce_to_estimator

    est = reduce_to_estimator(model)
    prs = riccati.solve_policy_riccati(est, policy)
    k, m, p = model.k, model.m, model.p
    n, N = cfg.horizon, cfg.trajectories
    burn = cfg.burn_in

    F, G, H, J = model.F, model.G, model.H, model.J
    K_p, K_Y = est.K_p, prs.K_Y
    K_lqr, Gbar = policy.K_LQR, policy.GammaBar
    joint_factor = la.psd_sqrt(model.joint_noise())
    m_factor = la.psd_sqrt(policy.M)
    s1_factor = la.psd_sqrt(model.Sigma1)

    # per-trajectory streams, stacked for a vectorized time loop
    z_s1 = np.empty((N, k))
    z_wv = np.empty((N, n, k + p))
    z_m = np.empty((N, n, m))
    for i in range(N):
        a, b, c = _traj_noise(cfg.seed, i, n, k, p, m)
        z_s1[i], z_wv[i], z_m[i] = a, b, c
    wv = z_wv @ joint_factor.T
    w_seq, v_seq = wv[:, :, :k], wv[:, :, k:]
    m_seq = z_m @ m_factor.T

    s = z_s1 @ s1_factor.T          # true state, (N, k)
    s_hat = np.zeros((N, k))        # controller KF estimate
    s_obs = np.zeros((N, k))        # observer estimate

    cost_sum = np.zeros(N)
    n_ret = n - burn
    sum_dd = np.zeros((k, k))       # (s_hat - s_obs) second moment
    sum_psi = np.zeros((p, p))
    sum_psi_lag = np.zeros((p, p))
    sum_err_shat = np.zeros((k, k))
    sum_obs_psi = np.zeros((k, p))
    sum_sq = {"err": 0.0, "shat": 0.0, "obs": 0.0, "psi": 0.0}
    psi_prev = None

    H_obs = H - J @ K_lqr           # innovation map at the observer
    F_obs = F - G @ K_lqr
    for i in range(n):
        x = (s_obs @ (-K_lqr).T + (s_hat - s_obs) @ Gbar.T + m_seq[:, i])
        y = s @ H.T + x @ J.T + v_seq[:, i]
        psi = y - s_obs @ H_obs.T
        if i >= burn:
            cost_sum += np.einsum("ij,jk,ik->i", s, weights.Q, s) \
                + np.einsum("ij,jk,ik->i", x, weights.R, x)
            d = s_hat - s_obs
            err = s - s_hat
            sum_dd += d.T @ d
            sum_psi += psi.T @ psi
            sum_err_shat += err.T @ s_hat
            sum_sq["err"] += float(np.sum(err * err))
            sum_sq["shat"] += float(np.sum(s_hat * s_hat))
            sum_sq["psi"] += float(np.sum(psi * psi))
            if psi_prev is not None:
                sum_psi_lag += psi_prev.T @ psi
                sum_obs_psi += d.T @ psi_prev
                sum_sq["obs"] += float(np.sum(d * d))
        innov = y - x @ J.T - s_hat @ H.T
        s_next = s @ F.T + x @ G.T + w_seq[:, i]
        s_hat = s_hat @ F.T + x @ G.T + innov @ K_p.T
        s_obs = s_obs @ F_obs.T + psi @ K_Y.T
        s = s_next
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > OVERFLOW_LIMIT:
            raise NumericalOverflow(
                f"trajectory diverged at step {i + 1}; the policy does not "
                "stabilize the closed loop")
        psi_prev = psi if i >= burn else None

    total = N * n_ret
    per_traj_cost = cost_sum / n_ret
    emp_cost = float(np.mean(per_traj_cost))
    stderr = float(np.std(per_traj_cost, ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    emp_sigma_hat = la.sym(sum_dd / total)
    emp_psi_y = la.sym(sum_psi / total)
    rate = 0.5 * (la.slogdet_pd(emp_psi_y, "empirical Psi_Y")
                  - la.slogdet_pd(est.Psi, "Psi"))
    lag_pairs = N * (n_ret - 1)
    whiteness = float(np.linalg.norm(sum_psi_lag / max(lag_pairs, 1))
                      / max(np.linalg.norm(emp_psi_y), 1e-300))
    return SimReport(
        empirical_cost=emp_cost,
        cost_stderr=stderr,
        empirical_SigmaHat=emp_sigma_hat,
        empirical_PsiY=emp_psi_y,
        empirical_rate=float(rate),
        innovation_whiteness=whiteness,
        samples=total,
        cross_state_err=sum_err_shat / total,
        cross_obs_psi=sum_obs_psi / max(lag_pairs, 1),
        state_err_scale=math.sqrt(sum_sq["err"] / total),
        shat_scale=math.sqrt(sum_sq["shat"] / total),
        obs_err_scale=math.sqrt(sum_sq["obs"] / max(lag_pairs, 1)),
        psi_scale=math.sqrt(sum_sq["psi"] / total),
    )


def compare_to_theory(report: SimReport, lb: LBSolution,
                      tols: SimTolerances | None = None) -> ComparisonVerdict:
    """Per-statistic pass/fail of the empirical report against theory."""
    if tols is None:
        tols = SimTolerances()
    checks = []
    target = lb.achieved_budget
    tol_cost = tols.cost_sigmas * max(report.cost_stderr, 1e-300)
    checks.append(SimCheck(
        "cost_within_stderr", report.empirical_cost, target, tol_cost,
        abs(report.empirical_cost - target) <= tol_cost))
    psi_y = lb.riccati.Psi_Y
    rel = float(np.linalg.norm(report.empirical_PsiY - psi_y)
                / max(np.linalg.norm(psi_y), 1e-300))
    checks.append(SimCheck("innovation_covariance_rel", rel, 0.0,
                           tols.psi_y_rel, rel <= tols.psi_y_rel))
    rate_tol = max(tols.rate_rel * abs(lb.rate), tols.rate_floor)
    checks.append(SimCheck(
        "rate", report.empirical_rate, lb.rate, rate_tol,
        abs(report.empirical_rate - lb.rate) <= rate_tol))
    wh_tol = 4.0 / math.sqrt(report.samples)
    checks.append(SimCheck("innovation_whiteness", report.innovation_whiteness,
                           0.0, wh_tol, report.innovation_whiteness <= wh_tol))
    return ComparisonVerdict(checks=tuple(checks))
