"""Transposable regularized covariance models and matrix imputation."""

from .backend import BACKEND
from .errors import CapExceeded, ConvergenceError, NumericalError, TranscovError
from .model import (
    CovParams,
    MaskedMatrix,
    MeanParams,
    PenaltySpec,
    TrcmModel,
    log_density,
    marginal_col,
    marginal_row,
    observed_loglik,
    penalized_loglik,
    sample,
    vec_form,
)
from .estimation import (
    SolverOptions,
    SpectralSolution,
    estimate_means,
    glasso,
    rcm_l1_cov,
    rcm_l2_cov,
    stationarity_residual,
    trcm_coordwise,
    trcm_l2l2,
)
from .imputation import (
    EStepResult,
    ImputationReport,
    ImputeOptions,
    ace_expectation,
    col_conditional,
    e_step,
    kron_conditional_covariance,
    kron_conditional_expectation,
    rcm_impute,
    row_conditional,
    trcm_impute_mcecm,
    trcm_impute_onestep,
)
from .baselines import BaselineOptions, knn_impute, mean_impute, svd_impute
from .evalsim import (
    CovStructure,
    ExperimentSpec,
    MethodSpec,
    cross_validate,
    gen_covariance,
    inject_mcar,
    inject_pattern,
    run_experiment,
    run_method,
    score,
    select_onestep_model,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BaselineOptions",
    "CapExceeded",
    "ConvergenceError",
    "CovParams",
    "CovStructure",
    "EStepResult",
    "ExperimentSpec",
    "ImputationReport",
    "ImputeOptions",
    "MaskedMatrix",
    "MeanParams",
    "MethodSpec",
    "NumericalError",
    "PenaltySpec",
    "SolverOptions",
    "SpectralSolution",
    "TranscovError",
    "TrcmModel",
    "ace_expectation",
    "col_conditional",
    "cross_validate",
    "e_step",
    "estimate_means",
    "gen_covariance",
    "glasso",
    "inject_mcar",
    "inject_pattern",
    "knn_impute",
    "kron_conditional_covariance",
    "kron_conditional_expectation",
    "log_density",
    "marginal_col",
    "marginal_row",
    "mean_impute",
    "observed_loglik",
    "penalized_loglik",
    "rcm_impute",
    "rcm_l1_cov",
    "rcm_l2_cov",
    "row_conditional",
    "run_experiment",
    "run_method",
    "sample",
    "score",
    "select_onestep_model",
    "stationarity_residual",
    "svd_impute",
    "trcm_coordwise",
    "trcm_impute_mcecm",
    "trcm_impute_onestep",
    "trcm_l2l2",
    "vec_form",
]
