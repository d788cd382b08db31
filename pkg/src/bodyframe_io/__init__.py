"""Body-frame inertial odometry toolkit.

Simulation of IMU data on analytic trajectories, learned sensor
correction and body-frame velocity models built from scratch on numpy,
an error-state EKF that fuses the two, dataset I/O in EuRoC-style CSV,
trajectory metrics, and latent-space analysis utilities.
"""

from .analysis import collect_latents, pca_cumulative_variance
from .corrector import (
    CorrectionOutput,
    IdentityCorrector,
    LearnedAffineCorrector,
    correct_and_quantify,
    train_corrector,
)
from .ekf import (
    EkfConfig,
    FilterState,
    batch_run,
    ekf_propagate,
    ekf_update,
    measurement_jacobian,
    predicted_velocity,
    streaming_run,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    InsufficientDataError,
    InvalidRotationError,
    NumericalError,
    ParseError,
    SingularUpdateError,
    TimestampOrderError,
)
from .imu_model import (
    GRAVITY,
    GravityModel,
    ImuSample,
    ImuWindow,
    RepresentationKind,
    specific_force,
    transform_representation,
)
from .metrics import (
    AlignedPair,
    accuracy_auc,
    ate,
    improvement_percentage,
    rte,
    rte_residuals,
)
from .motion_model import (
    ConstantZeroProvider,
    LossConfig,
    MotionNet,
    MotionNetConfig,
    NetworkProvider,
    OracleProvider,
    TrainConfig,
    VelocityMeasurement,
    combined_loss,
    covariance_loss,
    huber_loss,
    oracle_predict,
    train_motion_model,
)
from .preintegration import (
    NavState,
    ProcessNoise,
    dead_reckon,
    process_noise_covariance,
    propagate_covariance,
    propagate_state,
    propagation_jacobians,
    state_boxminus,
    state_boxplus,
)
from .simulator import (
    BiasTruth,
    NoiseSpec,
    TrajectoryKind,
    TrajectorySample,
    TrajectorySpec,
    YawMode,
    corrupt_imu,
    derive_imu,
    generate_trajectory,
)
from .so3 import exp_so3, hat, is_rotation, log_so3, right_jacobian, vee

__version__ = "0.1.0"

__all__ = [
    "AlignedPair",
    "BiasTruth",
    "ConfigError",
    "ConstantZeroProvider",
    "CorrectionOutput",
    "DataError",
    "DegenerateInputError",
    "EkfConfig",
    "FilterState",
    "GRAVITY",
    "GravityModel",
    "IdentityCorrector",
    "ImuSample",
    "ImuWindow",
    "InsufficientDataError",
    "InvalidRotationError",
    "LearnedAffineCorrector",
    "LossConfig",
    "MotionNet",
    "MotionNetConfig",
    "NavState",
    "NetworkProvider",
    "NoiseSpec",
    "NumericalError",
    "OracleProvider",
    "ParseError",
    "ProcessNoise",
    "RepresentationKind",
    "SingularUpdateError",
    "TimestampOrderError",
    "TrainConfig",
    "TrajectoryKind",
    "TrajectorySample",
    "TrajectorySpec",
    "VelocityMeasurement",
    "YawMode",
    "accuracy_auc",
    "ate",
    "batch_run",
    "collect_latents",
    "combined_loss",
    "correct_and_quantify",
    "corrupt_imu",
    "covariance_loss",
    "dead_reckon",
    "derive_imu",
    "ekf_propagate",
    "ekf_update",
    "exp_so3",
    "generate_trajectory",
    "hat",
    "huber_loss",
    "improvement_percentage",
    "is_rotation",
    "log_so3",
    "measurement_jacobian",
    "oracle_predict",
    "pca_cumulative_variance",
    "predicted_velocity",
    "process_noise_covariance",
    "propagate_covariance",
    "propagate_state",
    "propagation_jacobians",
    "right_jacobian",
    "rte",
    "rte_residuals",
    "specific_force",
    "state_boxminus",
    "state_boxplus",
    "streaming_run",
    "train_corrector",
    "train_motion_model",
    "transform_representation",
    "vee",
]
