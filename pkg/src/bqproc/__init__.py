"""Smoothed quantile-process estimation for binary response models.

The package estimates the coefficient process of a binary response model
by maximizing a kernel-smoothed score over quantile levels, recovers
conditional choice probabilities from the crossing level of the fitted
process, and ships a seeded Monte Carlo harness that checks the
distributional claims behind the estimator.
"""

from .choiceprob import (
    ChoiceProbEstimate,
    SampledFunction,
    choice_prob,
    choice_prob_se,
    crossing_se,
    linearization_bound_check,
    monotone_rearrangement,
    psi,
)
from .dgp import (
    DGPSpec,
    parse_dgp_config,
    philox_generator,
    population_bias,
    population_delta,
    population_Q,
    reference_dgp,
    simulate,
    true_beta,
    true_choice_prob,
    true_tau_w,
)
from .estimator import (
    BandwidthWarning,
    CoefficientPath,
    FitDiagnostics,
    OptimizerConfig,
    default_bandwidth,
    estimate_beta,
    estimate_process,
)
from .exceptions import (
    BqprocError,
    ConfigurationError,
    DegenerateResponse,
    DomainError,
    EstimationError,
    IllConditionedCrossing,
    MonteCarloError,
    NoCrossing,
    NumericError,
    PreconditionNotMet,
)
from .kernels import (
    KernelSpec,
    MomentReport,
    antiderivative_consistency,
    builtin_kernel,
    kernel_moment,
    kernel_square_integral,
    validate_moments,
)
from .montecarlo import (
    ExperimentConfig,
    McSummary,
    RateReport,
    RawResults,
    parse_experiment_config,
    rate_check,
    run_experiment,
    summarize,
)
from .score import (
    CovariatePoint,
    Dataset,
    ScorePoint,
    asymptotic_variance,
    load_dataset_csv,
    margins,
    raw_score,
    save_dataset_csv,
    score_gradient,
    score_hessian,
    smoothed_score,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # kernels
    "KernelSpec",
    "MomentReport",
    "builtin_kernel",
    "kernel_moment",
    "kernel_square_integral",
    "validate_moments",
    "antiderivative_consistency",
    # score
    "Dataset",
    "CovariatePoint",
    "ScorePoint",
    "load_dataset_csv",
    "save_dataset_csv",
    "margins",
    "raw_score",
    "smoothed_score",
    "score_gradient",
    "score_hessian",
    "asymptotic_variance",
    # estimator
    "OptimizerConfig",
    "FitDiagnostics",
    "CoefficientPath",
    "estimate_beta",
    "estimate_process",
    "default_bandwidth",
    "BandwidthWarning",
    # choiceprob
    "SampledFunction",
    "ChoiceProbEstimate",
    "psi",
    "monotone_rearrangement",
    "choice_prob",
    "choice_prob_se",
    "crossing_se",
    "linearization_bound_check",
    # dgp
    "DGPSpec",
    "reference_dgp",
    "parse_dgp_config",
    "philox_generator",
    "simulate",
    "true_beta",
    "true_choice_prob",
    "true_tau_w",
    "population_Q",
    "population_bias",
    "population_delta",
    # montecarlo
    "ExperimentConfig",
    "RawResults",
    "McSummary",
    "RateReport",
    "run_experiment",
    "summarize",
    "rate_check",
    "parse_experiment_config",
    # errors
    "BqprocError",
    "ConfigurationError",
    "DomainError",
    "NumericError",
    "DegenerateResponse",
    "EstimationError",
    "NoCrossing",
    "IllConditionedCrossing",
    "PreconditionNotMet",
    "MonteCarloError",
]
