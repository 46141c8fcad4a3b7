"""Bounding-cube pose metrics, losses and a small fitting harness."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .geometry import (
    BoundingCube,
    Pose,
    ScaleParam,
    apply_pose,
    axis_angle_to_rotation,
    compose,
    cube_from_aabb,
    diameter,
    effective_scale,
    rotation_to_axis_angle,
    scale_cube,
    volume,
)
from .metrics import (
    ChamferDirection,
    MetricScore,
    add_error,
    add_s_error,
    chamfer_mean,
    pose_error,
    threshold_accuracy,
)
from .losses import (
    BevBox,
    LossWeights,
    PoseScaleParams,
    combined_loss,
    cube_loss,
    riou,
    volume_loss,
)
from .optim import FitConfig, FitTrace, LossProblem, fit_pose, loss_gradient
from .config import ExperimentConfig, SubnetShape, load_config, subnet_shape
from .audit import AuditFlag, AuditReason, CameraIntrinsics, frustum_audit, project_point
