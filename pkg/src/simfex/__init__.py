"""
Bias correction for regressions on a categorized, mismeasured continuous
covariate.

The package estimates the misclassification induced by additive Box-Cox
normal measurement error, corrects the naive categorical regression by
simulation-free extrapolation (SIMFEX) or by misclassification SIMEX
(MCSIMEX), and provides a Monte Carlo study harness and a command-line
interface.
"""

from .error_model import (
    BoxCoxParam,
    ErrorModelParams,
    box_cox_transform,
    fit_error_params,
    fit_lambda,
    inverse_box_cox,
)
from .estimator import (
    DEFAULT_ETA_GRID,
    BootstrapSummary,
    ContrastResult,
    Extrapolant,
    SimfexResult,
    bootstrap_inference,
    contrast_map,
    extrapolate_naive,
    fit_extrapolant,
    fit_simfex,
    naive_map,
    pseudo_sequence,
    simfex_contrast_estimate,
    simfex_estimate,
)
from .exceptions import (
    ConfigError,
    DataError,
    DomainError,
    EstimationError,
    EstimationWarning,
    NumericalError,
    SimfexError,
)
from .glm import Dataset, FitResult, build_design, fit, fit_categories
from .mcsimex import McsimexConfig, McsimexResult, mcsimex_estimate, misclassify
from .misclass import (
    CategoryScheme,
    MisclassResult,
    categorize,
    estimate_misclassification,
    estimate_pi_p,
    estimate_pi_p_by_group,
    normal_quantile_cutpoints,
    quantile_cutpoints,
)
from .stochastic_matrix import fractional_power, naive_map_matrix

__version__ = "0.1.0"

__all__ = [
    "BoxCoxParam",
    "ErrorModelParams",
    "box_cox_transform",
    "fit_error_params",
    "fit_lambda",
    "inverse_box_cox",
    "DEFAULT_ETA_GRID",
    "BootstrapSummary",
    "ContrastResult",
    "Extrapolant",
    "SimfexResult",
    "bootstrap_inference",
    "contrast_map",
    "extrapolate_naive",
    "fit_extrapolant",
    "fit_simfex",
    "naive_map",
    "pseudo_sequence",
    "simfex_contrast_estimate",
    "simfex_estimate",
    "ConfigError",
    "DataError",
    "DomainError",
    "EstimationError",
    "EstimationWarning",
    "NumericalError",
    "SimfexError",
    "Dataset",
    "FitResult",
    "build_design",
    "fit",
    "fit_categories",
    "McsimexConfig",
    "McsimexResult",
    "mcsimex_estimate",
    "misclassify",
    "CategoryScheme",
    "MisclassResult",
    "categorize",
    "estimate_misclassification",
    "estimate_pi_p",
    "estimate_pi_p_by_group",
    "normal_quantile_cutpoints",
    "quantile_cutpoints",
    "fractional_power",
    "naive_map_matrix",
]
