"""Normative diffusion autoencoder pipeline.

Thin Python facade over the C++ core: tensor/autodiff primitives, the
diffusion schedule, survival statistics, normative scoring helpers, the
synthetic cohort generator, and the end-to-end pipeline commands.
"""

from ._core import (
    ConfigError,
    CoxFit,
    DataError,
    KMPoint,
    NoiseSchedule,
    NumericError,
    SamplingPlan,
    Settings,
    SurvivalRecord,
    Tape,
    Tensor,
    TestResult,
    add,
    compute_reference,
    cosine_similarity,
    cox_fit,
    cox_partial_loglik,
    grad_of,
    kendall_tau,
    km_estimate,
    ks_two_sample,
    linear,
    mse,
    mul,
    normalized_mutual_info,
    pearson,
    render_phantom,
    run_generate,
    run_report,
    run_score,
    run_survival,
    run_train,
    run_train_age_baseline,
    standardize,
)

__all__ = [
    "ConfigError",
    "CoxFit",
    "DataError",
    "KMPoint",
    "NoiseSchedule",
    "NumericError",
    "SamplingPlan",
    "Settings",
    "SurvivalRecord",
    "Tape",
    "Tensor",
    "TestResult",
    "add",
    "compute_reference",
    "cosine_similarity",
    "cox_fit",
    "cox_partial_loglik",
    "grad_of",
    "kendall_tau",
    "km_estimate",
    "ks_two_sample",
    "linear",
    "mse",
    "mul",
    "normalized_mutual_info",
    "pearson",
    "render_phantom",
    "run_generate",
    "run_report",
    "run_score",
    "run_survival",
    "run_train",
    "run_train_age_baseline",
    "standardize",
]

__version__ = "0.1.0"
