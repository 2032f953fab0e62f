"""Identification of Gaussian LTI systems from multi-environment interventional data."""

from .environments import (
    CenteringRecord,
    DesignDiagnostics,
    EnvironmentSpec,
    FitData,
    TrajectorySet,
    design_max_variability,
    generate_dataset,
    sample_means,
    sample_random_design,
    split_trajectory_set,
    variability_matrix,
)
from .errors import (
    ConfigError,
    DegenerateDecoderError,
    DimensionError,
    DivergenceError,
    LTIError,
    NumericError,
    PoleError,
    RankDeficiencyError,
    SingularCovarianceError,
    UndefinedCorrelationError,
)
from .estimator import (
    FitConfig,
    FitReport,
    LinearDecoder,
    analytic_decoder,
    center,
    fit,
    negative_log_likelihood,
    nll_gradient,
    predict_controls,
)
from .metrics import Equivalence, MccReport, linear_sum_assignment, mcc, transfer_equivalence
from .physical import DcMotorParams, dc_motor
from .sysid import HoKalmanResult, RankGapWarning, hankel, ho_kalman
from .systems import (
    ContinuousStateSpace,
    HankelMatrix,
    MarkovParams,
    StateSpace,
    SystemReport,
    Trajectory,
    discretize,
    log_odds,
    markov_params,
    output_log_density,
    similarity_transform,
    simulate,
    spectral_radius,
    trajectory_log_density,
    transfer_function,
    unrolled_map,
    validate_system,
)

__all__ = [
    "CenteringRecord",
    "ConfigError",
    "ContinuousStateSpace",
    "DcMotorParams",
    "DegenerateDecoderError",
    "DesignDiagnostics",
    "DimensionError",
    "DivergenceError",
    "EnvironmentSpec",
    "Equivalence",
    "FitConfig",
    "FitData",
    "FitReport",
    "HankelMatrix",
    "HoKalmanResult",
    "LTIError",
    "LinearDecoder",
    "MarkovParams",
    "MccReport",
    "NumericError",
    "PoleError",
    "RankDeficiencyError",
    "RankGapWarning",
    "SingularCovarianceError",
    "StateSpace",
    "SystemReport",
    "Trajectory",
    "TrajectorySet",
    "UndefinedCorrelationError",
    "analytic_decoder",
    "center",
    "dc_motor",
    "design_max_variability",
    "discretize",
    "fit",
    "generate_dataset",
    "hankel",
    "ho_kalman",
    "linear_sum_assignment",
    "log_odds",
    "markov_params",
    "mcc",
    "negative_log_likelihood",
    "nll_gradient",
    "output_log_density",
    "predict_controls",
    "sample_means",
    "sample_random_design",
    "similarity_transform",
    "simulate",
    "spectral_radius",
    "split_trajectory_set",
    "trajectory_log_density",
    "transfer_equivalence",
    "transfer_function",
    "unrolled_map",
    "validate_system",
    "variability_matrix",
]

__version__ = "0.1.0"
