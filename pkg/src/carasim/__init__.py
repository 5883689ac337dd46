"""Simulation and verification toolkit for covariate-adjusted
response-adaptive treatment allocation designs."""

from .allocation import AllocationRule
from .asymptotics import (
    ConditionalCovariance,
    ExpectationMethod,
    PluginReport,
    SingularInformationError,
    TheoryOptions,
    TheoryReport,
    ZeroMassCovariateError,
    bb_closed_forms,
    expectation_nodes,
    iid_mle_covariance,
    info_matrices,
    lse_sandwich,
    plugin_estimates,
    scaled_mle_covariance,
    sigma,
    sigma_given_x,
    target_allocation,
    theory_report,
)
from .engine import (
    EngineOptions,
    TrialHistory,
    TrialStreams,
    burn_in_schedule,
    child_sequence,
    replicate_root,
    run_trial,
    step,
    streams_for_trial,
)
from .estimation import (
    ArmSample,
    EmptySampleError,
    FitOptions,
    FitResult,
    fit_grouped_logistic_mle,
    fit_linear_lse,
    fit_logistic_mle,
    fit_shared_slope_lse,
    update_all_estimates,
)
from .harness import (
    ConfigError,
    CriterionCheck,
    ExperimentConfig,
    ReplicationSummary,
    VerificationReport,
    emit_reports,
    parse_config,
    run_replications,
    verify,
    verify_config,
)
from .model import ArmModel, Constant, CovariateSpec, TrialModel, TwoPoint, Uniform

__version__ = "0.1.0"

__all__ = [
    "AllocationRule",
    "ArmModel",
    "ArmSample",
    "ConditionalCovariance",
    "ConfigError",
    "Constant",
    "CovariateSpec",
    "CriterionCheck",
    "EmptySampleError",
    "EngineOptions",
    "ExperimentConfig",
    "ExpectationMethod",
    "FitOptions",
    "FitResult",
    "PluginReport",
    "ReplicationSummary",
    "SingularInformationError",
    "TheoryOptions",
    "TheoryReport",
    "TrialHistory",
    "TrialModel",
    "TrialStreams",
    "TwoPoint",
    "Uniform",
    "VerificationReport",
    "ZeroMassCovariateError",
    "bb_closed_forms",
    "burn_in_schedule",
    "child_sequence",
    "emit_reports",
    "expectation_nodes",
    "fit_grouped_logistic_mle",
    "fit_linear_lse",
    "fit_logistic_mle",
    "fit_shared_slope_lse",
    "iid_mle_covariance",
    "info_matrices",
    "lse_sandwich",
    "parse_config",
    "plugin_estimates",
    "replicate_root",
    "run_replications",
    "run_trial",
    "scaled_mle_covariance",
    "sigma",
    "sigma_given_x",
    "step",
    "streams_for_trial",
    "target_allocation",
    "theory_report",
    "update_all_estimates",
    "verify",
    "verify_config",
]
