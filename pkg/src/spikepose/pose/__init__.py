from .head import RegressionHead, regression_head
from .kinematics import (
    BehindCameraError,
    ConfigurationError,
    Intrinsics,
    KinematicModel,
    PoseParams,
    chain_model,
    desk_model,
    fk,
    forward_kinematics,
    project,
    rodrigues,
    rotation_to_axis_angle,
)
from .loss import LossWeights, loss_total
from .metrics import MetricReport, metrics, rigid_align

__all__ = [
    "BehindCameraError",
    "ConfigurationError",
    "Intrinsics",
    "KinematicModel",
    "LossWeights",
    "MetricReport",
    "PoseParams",
    "RegressionHead",
    "chain_model",
    "desk_model",
    "fk",
    "forward_kinematics",
    "loss_total",
    "metrics",
    "project",
    "regression_head",
    "rigid_align",
    "rodrigues",
    "rotation_to_axis_angle",
]
