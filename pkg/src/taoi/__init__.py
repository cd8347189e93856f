"""Transmission scheduling for task-oriented age of information (TAoI)."""
from .model import Action, DerivedParams, State, SystemParams, derive
from .single_threshold import average_cost_j, optimize_threshold
# after the submodule import, so the name binds to the policy constructor
from .policy import Policy, always_transmit, pre_identification, single_threshold, threshold_pair
from .solver import (
    SolveOptions,
    SolveResult,
    evaluate_policy_exact,
    extract_thresholds,
    rvi_solve,
    threshold_rvi_solve,
)

__all__ = [
    "Action", "DerivedParams", "State", "SystemParams", "derive",
    "Policy", "always_transmit", "pre_identification", "single_threshold", "threshold_pair",
    "average_cost_j", "optimize_threshold",
    "SolveOptions", "SolveResult", "evaluate_policy_exact", "extract_thresholds",
    "rvi_solve", "threshold_rvi_solve",
]
