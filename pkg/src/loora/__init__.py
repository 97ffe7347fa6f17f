"""Design-based ATE estimation with leave-one-out ridge regression adjustment."""

from .design import Assignment, CompleteDesign, SimpleDesign, draw, enumerate_assignments
from .estimators import (
    LambdaRule,
    Method,
    ObservedSample,
    estimate,
    estimate_adj,
    estimate_dm,
    estimate_ht,
    estimate_int,
    estimate_loora_dm,
    estimate_loora_dm_pairwise,
    estimate_loora_ht,
    estimate_ridge_reg,
)
from .inference import (
    EstimateReport,
    confidence_interval,
    estimate_with_ci,
    hw_variance_dm,
    hw_variance_ht,
    normal_quantile,
)
from .oracle import (
    Population,
    adjusted_ht_variance,
    dm_variance,
    enumeration_moments,
    ht_variance,
    lin_asymptotic_variance,
    loora_dm_variance,
    loora_ht_variance,
)
from .simulation import SimulationReport, StudyConfig, run_study, synth_population

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "CompleteDesign",
    "EstimateReport",
    "LambdaRule",
    "Method",
    "ObservedSample",
    "Population",
    "SimpleDesign",
    "SimulationReport",
    "StudyConfig",
    "adjusted_ht_variance",
    "confidence_interval",
    "dm_variance",
    "draw",
    "enumerate_assignments",
    "enumeration_moments",
    "estimate",
    "estimate_adj",
    "estimate_dm",
    "estimate_ht",
    "estimate_int",
    "estimate_loora_dm",
    "estimate_loora_dm_pairwise",
    "estimate_loora_ht",
    "estimate_ridge_reg",
    "estimate_with_ci",
    "ht_variance",
    "hw_variance_dm",
    "hw_variance_ht",
    "lin_asymptotic_variance",
    "loora_dm_variance",
    "loora_ht_variance",
    "normal_quantile",
    "run_study",
    "synth_population",
    "__version__",
]
