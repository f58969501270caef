"""Companion-matrix state-space models for time series forecasting.

The state matrix is a companion matrix (shift plus a free last column), which
makes every step O(d), lets one SSM represent AR, ARMA, exponential smoothing
and differencing exactly, and admits an O(ell log ell + d log d) output filter.
"""

from .core import CompanionMatrix, Ssm, apply, apply_row, dense, normalize_stability, power_apply, step
from .errors import (
    DataError,
    DimensionError,
    DivergenceError,
    MissingFeedbackError,
    NotControllableError,
    SingularResolventError,
)
from .filters import (
    FilterPlan,
    PlanCache,
    apply_filter,
    c_tilde,
    closed_loop_rollout,
    fast_closed_loop_rollout,
    fast_output_filter,
    naive_output_filter,
    output_filter,
)

__version__ = "0.1.0"

__all__ = [
    "CompanionMatrix",
    "Ssm",
    "apply",
    "apply_row",
    "dense",
    "normalize_stability",
    "power_apply",
    "step",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "MissingFeedbackError",
    "NotControllableError",
    "SingularResolventError",
    "FilterPlan",
    "PlanCache",
    "apply_filter",
    "c_tilde",
    "closed_loop_rollout",
    "fast_closed_loop_rollout",
    "fast_output_filter",
    "naive_output_filter",
    "output_filter",
]
