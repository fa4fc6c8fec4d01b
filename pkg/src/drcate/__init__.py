"""Doubly robust estimation of conditional average treatment effects.

Two-step estimator: fit the propensity score and the two outcome regressions
(parametrically, by kernel regression, or by dimension-reduced kernel
regression), form the doubly robust pseudo-outcome, then smooth it over the
conditioning covariates with a higher-order kernel.  Companion tools compute
plug-in asymptotic variances, misspecification-bias diagnostics, and Monte
Carlo benchmarks on two bundled data-generating models.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .kernels import (
    BandwidthRule,
    BandwidthSchedule,
    KernelSpec,
    RateViolation,
    check_rate_conditions,
    kernel_eval,
    kernel_moment,
    roughness,
)
from .nuisance import (
    ComponentSpec,
    Dataset,
    EstimationError,
    NuisanceConfig,
    NuisanceFit,
    OracleValues,
    SdrSpec,
    assemble_nuisance,
)
from .estimator import (
    CateCurve,
    estimate_cate,
    pseudo_outcome,
    pseudo_outcomes,
    standardized_stat,
)
from .asymptotics import (
    bias_formula,
    fill_plugin_variance,
    sigma2_minus_sigma1_homoscedastic,
    v_of,
    vd,
)
from .simulation import (
    DgpSpec,
    McConfig,
    McReport,
    McResult,
    default_schedule,
    gen_model1,
    gen_model2,
    run_mc,
    true_tau,
)

__all__ = [
    "__version__",
    "BandwidthRule",
    "BandwidthSchedule",
    "KernelSpec",
    "RateViolation",
    "check_rate_conditions",
    "kernel_eval",
    "kernel_moment",
    "roughness",
    "ComponentSpec",
    "Dataset",
    "EstimationError",
    "NuisanceConfig",
    "NuisanceFit",
    "OracleValues",
    "SdrSpec",
    "assemble_nuisance",
    "CateCurve",
    "estimate_cate",
    "pseudo_outcome",
    "pseudo_outcomes",
    "standardized_stat",
    "bias_formula",
    "fill_plugin_variance",
    "sigma2_minus_sigma1_homoscedastic",
    "v_of",
    "vd",
    "DgpSpec",
    "McConfig",
    "McReport",
    "McResult",
    "default_schedule",
    "gen_model1",
    "gen_model2",
    "run_mc",
    "true_tau",
]
