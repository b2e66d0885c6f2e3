"""Multivariable Mendelian randomization with measurement-error correction.

Estimates causal effects of multiple exposures on an outcome from GWAS
summary statistics, quantifies the bias that exposure measurement error
induces in the inverse-variance weighted estimator, corrects it with a
profile-likelihood estimator, and reproduces those properties in a Monte
Carlo simulation engine.
"""

from .bias import BiasDiagnostics, diagnose, estimate_moments, predict_ivw_bias
from .data import (
    CausalEstimate,
    Method,
    SummaryDataset,
    ValidationReport,
    apply_trait_correlation,
    validate,
)
from .errors import EstimationError, InputError, MvmrError
from .ivw import fit_ivw, fit_ivw_univariable
from .mediation import (
    MediationResult,
    delta_method_se,
    proportion_from_effects,
    proportion_mediated,
)
from .mle import MleOptions, fit_mle, profile_loglik, sandwich_variance
from .simulation import (
    FStatistics,
    MediationStudyResult,
    MonteCarloSummary,
    Population,
    Sample,
    ScenarioSpec,
    draw_population,
    f_statistics,
    generate_sample,
    replicate_dataset,
    run_mediation_study,
    run_monte_carlo,
    sample_trait_correlation,
    summarize_associations,
)

__version__ = "0.1.0"

__all__ = [
    "BiasDiagnostics",
    "CausalEstimate",
    "EstimationError",
    "FStatistics",
    "InputError",
    "MediationResult",
    "MediationStudyResult",
    "Method",
    "MleOptions",
    "MonteCarloSummary",
    "MvmrError",
    "Population",
    "Sample",
    "ScenarioSpec",
    "SummaryDataset",
    "ValidationReport",
    "apply_trait_correlation",
    "delta_method_se",
    "diagnose",
    "draw_population",
    "estimate_moments",
    "f_statistics",
    "fit_ivw",
    "fit_ivw_univariable",
    "fit_mle",
    "generate_sample",
    "predict_ivw_bias",
    "profile_loglik",
    "proportion_from_effects",
    "proportion_mediated",
    "replicate_dataset",
    "run_mediation_study",
    "run_monte_carlo",
    "sample_trait_correlation",
    "sandwich_variance",
    "summarize_associations",
    "validate",
]
