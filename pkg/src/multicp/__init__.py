"""Exact maximum-likelihood estimation for multiple change-point models.

The model has ``k`` known change points, a parametric family per segment
with its own parameter ``theta_j``, and an optional parameter ``psi``
shared by all segments (for example a common variance).
"""

from .errors import (
    ArgumentError,
    ChangePointError,
    DomainError,
    IdentifiabilityError,
    InferenceError,
    IntegrationError,
    InternalError,
    LemmaCheckError,
    NumericError,
    OptimizationError,
    ParameterError,
    SizeError,
)
from .estimator import FitResult, SegmentCostTable, brute_force_fit, fit, fit_fixed_psi
from .families import (
    Exponential,
    MultivariateNormalCommonCov,
    NormalCommonVariance,
    NormalKnownVariance,
    Poisson,
    SegmentFamily,
    grad_log_density,
    log_density,
    make_family,
    sample,
    segment_mle_theta,
)
from .inference import InfoMatrix, plugin_info, standard_errors, wald_intervals
from .kernels import BACKEND
from .likelihood import (
    OverlapMatrix,
    full_loglik,
    j1,
    j2,
    j2_regrouped,
    kl_v,
    overlap_counts,
)
from .model import ChangePointConfig, Dataset, ModelSpec, ParameterBox, ParameterState

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "ChangePointConfig", "ChangePointError", "Dataset", "DomainError", "Exponential",
    "FitResult", "IdentifiabilityError", "InferenceError", "InfoMatrix", "IntegrationError", "InternalError",
    "LemmaCheckError", "ModelSpec", "MultivariateNormalCommonCov", "NormalCommonVariance", "NormalKnownVariance",
    "NumericError", "OptimizationError", "OverlapMatrix", "ParameterBox", "ParameterError", "ParameterState",
    "Poisson", "SegmentCostTable", "SegmentFamily", "SizeError", "BACKEND", "brute_force_fit", "fit",
    "fit_fixed_psi", "full_loglik", "grad_log_density", "j1", "j2", "j2_regrouped", "kl_v", "log_density",
    "make_family", "overlap_counts", "plugin_info", "sample", "segment_mle_theta", "standard_errors",
    "wald_intervals",
]
