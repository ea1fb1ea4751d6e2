"""Debiased-lasso Cox inference with substantive-model-compatible
multiple imputation for partially observed covariates."""

from .debias import (
    ContrastResult,
    DebiasedFit,
    ThetaHat,
    contrast,
    debias,
    nodewise_theta,
)
from .engine import (
    ChainResult,
    ChainSchedule,
    TuningConfig,
    initialize_missing,
    phase0_tune,
    run_chain,
    run_iro_fixed_point,
)
from .imputation import (
    ImputationFailure,
    ModelParams,
    RefitDraws,
    SweepWorkspace,
    WorkingModelDraw,
    cox_density,
    fit_discrete_working_model,
    fit_gaussian_working_model,
    mh_accept,
    smcfcs_sweep,
)
from .lasso import LassoFit, cv_select_lambda, default_grid, fit, lambda_max
from .pooling import PooledInference, rubin_pool
from .simulate import (
    METHODS,
    MethodResult,
    MetricsRow,
    SimDesign,
    SimulatedInstance,
    compute_metrics,
    generate_dataset,
    run_method,
    run_study,
)
from .survival import (
    BaselineHazard,
    CompletedMatrix,
    CoxCache,
    SurvivalDataset,
    VariableKind,
    breslow,
    information_matrix,
    neg_log_partial_likelihood,
    observed_hessian,
    partial_likelihood_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineHazard", "ChainResult", "ChainSchedule", "CompletedMatrix",
    "ContrastResult", "CoxCache", "DebiasedFit", "ImputationFailure",
    "LassoFit", "METHODS", "MethodResult", "MetricsRow", "ModelParams",
    "PooledInference", "RefitDraws", "SimDesign", "SimulatedInstance",
    "SurvivalDataset", "SweepWorkspace", "ThetaHat", "TuningConfig",
    "VariableKind", "WorkingModelDraw", "breslow", "compute_metrics",
    "contrast", "cox_density", "cv_select_lambda", "debias", "default_grid",
    "fit", "fit_discrete_working_model", "fit_gaussian_working_model",
    "generate_dataset", "information_matrix", "initialize_missing",
    "lambda_max", "mh_accept", "neg_log_partial_likelihood", "nodewise_theta",
    "observed_hessian", "partial_likelihood_gradient", "phase0_tune",
    "rubin_pool", "run_chain", "run_iro_fixed_point", "run_method",
    "run_study", "smcfcs_sweep",
]
