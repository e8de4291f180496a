"""Steady-state constants of a budgeted problem, shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import riccati
from .model import BudgetedProblem, CostWeights, EstimatorModel, SystemModel


@dataclass(frozen=True)
class ProblemConstants:
    """Filter and control Riccati constants evaluated once per problem."""

    model: SystemModel
    weights: CostWeights
    filter: riccati.FilterConstants
    control: riccati.ControlConstants

    @classmethod
    def compute(cls, model: SystemModel, weights: CostWeights) -> "ProblemConstants":
        return cls(model=model, weights=weights,
                   filter=riccati.solve_filter_riccati(model),
                   control=riccati.solve_control_riccati(model, weights))

    @classmethod
    def for_problem(cls, problem: BudgetedProblem) -> "ProblemConstants":
        return cls.compute(problem.model, problem.weights)

    @property
    def Sigma(self) -> np.ndarray:
        return self.filter.Sigma

    @property
    def K_p(self) -> np.ndarray:
        return self.filter.K_p

    @property
    def Psi(self) -> np.ndarray:
        return self.filter.Psi

    @property
    def E(self) -> np.ndarray:
        return self.control.E

    @property
    def K_LQR(self) -> np.ndarray:
        return self.control.K_LQR

    @property
    def Psi_LQR(self) -> np.ndarray:
        return self.control.Psi_LQR

    @cached_property
    def estimator(self) -> EstimatorModel:
        m = self.model
        return EstimatorModel(F=m.F, G=m.G, H=m.H, J=m.J,
                              K_p=self.K_p, Psi=self.Psi, Sigma=self.Sigma)

    @cached_property
    def minimal_cost(self) -> float:
        """Tr(K_p Psi K_p^T E) + Tr(Sigma Q), the zero-rate cost floor."""
        return float(np.trace(self.K_p @ self.Psi @ self.K_p.T @ self.E)
                     + np.trace(self.Sigma @ self.weights.Q))

    def cost_of(self, Pi: np.ndarray, Gamma: np.ndarray,
                SigmaHat: np.ndarray) -> float:
        """The five-term trace cost of a decision triple (in budget units)."""
        KtPsiL = self.K_LQR.T @ self.Psi_LQR
        return float(np.trace(SigmaHat @ KtPsiL @ self.K_LQR)
                     + np.trace(Pi @ self.Psi_LQR)
                     + 2.0 * np.trace(Gamma @ KtPsiL)) + self.minimal_cost
