"""Optimal timing of business expansion under exponential utility."""

from .closed_form import (
    PolicyKind,
    PolicySpec,
    SurfaceKind,
    ValueSurface,
    optimal_control,
    premium,
    utility,
    value_full,
    value_post_expansion,
)
from .errors import (
    BoundaryAmbiguityError,
    BudgetError,
    ConvergenceError,
    DegenerateError,
    DistributionError,
    DomainError,
    NonFiniteError,
    StabilityError,
)
from .model import (
    Case,
    ExpansionSchedule,
    FeasibilityReport,
    MarketParams,
    compute_schedule,
    feasibility,
    h,
    validate,
    waiting_time_sensitivity,
)

__all__ = [
    "BoundaryAmbiguityError",
    "BudgetError",
    "Case",
    "ConvergenceError",
    "DegenerateError",
    "DistributionError",
    "DomainError",
    "ExpansionSchedule",
    "FeasibilityReport",
    "MarketParams",
    "NonFiniteError",
    "PolicyKind",
    "PolicySpec",
    "StabilityError",
    "SurfaceKind",
    "ValueSurface",
    "compute_schedule",
    "feasibility",
    "h",
    "optimal_control",
    "premium",
    "utility",
    "validate",
    "value_full",
    "value_post_expansion",
    "waiting_time_sensitivity",
]

__version__ = "0.1.0"
