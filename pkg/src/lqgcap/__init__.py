"""Capacity of LQG control systems used as communication channels.

Library surface:

- model: system/cost types, validation, estimator reduction, cost baseline
- riccati: filter/control/policy Riccati solvers, recursions, PBH tests
- upper_bound: the determinant-maximization capacity upper bound
- lower_bound: policy extraction, evaluation, tightness certificates
- scop: the finite-horizon sequential program and its averaging argument
- simulator: Monte-Carlo closed-loop validation
- cli: the `lqgcap` command-line front end
"""

from .constants import ProblemConstants
from .lower_bound import (
    LBSolution,
    TightnessCertificate,
    evaluate_policy,
    extract_policy,
    tightness_certificate,
)
from .model import (
    BudgetedProblem,
    CostWeights,
    EstimatorModel,
    SystemModel,
    ValidationReport,
    minimal_lqg_cost,
    reduce_to_estimator,
    validate_model,
)
from .riccati import (
    ControlConstants,
    FilterConstants,
    PBHResult,
    Policy,
    PolicyRiccatiSolution,
    pbh_test,
    riccati_recursion,
    solve_control_riccati,
    solve_filter_riccati,
    solve_policy_riccati,
)
from .scop import SCOPSolution, average_variables, solve_scop
from .simulator import (
    ComparisonVerdict,
    SimConfig,
    SimReport,
    compare_to_theory,
    simulate,
)
from .upper_bound import (
    KKTReport,
    SolverOptions,
    UBDecision,
    UBSolution,
    feasibility,
    rate_from_psi,
    solve_scalar,
    solve_ub,
    verify_scalar_kkt,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetedProblem",
    "ComparisonVerdict",
    "ControlConstants",
    "CostWeights",
    "EstimatorModel",
    "FilterConstants",
    "KKTReport",
    "LBSolution",
    "PBHResult",
    "Policy",
    "PolicyRiccatiSolution",
    "ProblemConstants",
    "SCOPSolution",
    "SimConfig",
    "SimReport",
    "SolverOptions",
    "SystemModel",
    "TightnessCertificate",
    "UBDecision",
    "UBSolution",
    "ValidationReport",
    "average_variables",
    "compare_to_theory",
    "evaluate_policy",
    "extract_policy",
    "feasibility",
    "minimal_lqg_cost",
    "pbh_test",
    "rate_from_psi",
    "reduce_to_estimator",
    "riccati_recursion",
    "simulate",
    "solve_control_riccati",
    "solve_filter_riccati",
    "solve_policy_riccati",
    "solve_scalar",
    "solve_scop",
    "solve_ub",
    "tightness_certificate",
    "validate_model",
    "verify_scalar_kkt",
]
