from .model import (
    GroundPlaneProjection,
    NonFiniteActivationError,
    PlannerConfig,
    PlannerError,
    ProjectionStack,
    ResolutionMismatchError,
    VARIANT_IMAGE_PLANE_HOMOGRAPHY,
    VARIANT_MULTI_BRANCH_BEV,
    VARIANT_SINGLE_BRANCH_BEV,
    VARIANTS,
    WaypointPlanner,
    project_to_bev,
    spatial_softmax,
)
from .losses import (
    BCE_EPS,
    LossTerms,
    compute_loss,
    per_sample_ade,
    quality_bce,
    quality_target_for,
    waypoint_l1,
)
from .checkpoint import (
    CheckpointConfigError,
    CheckpointError,
    load_checkpoint,
    model_fingerprint,
    save_checkpoint,
    state_fingerprint,
)

__all__ = [
    "GroundPlaneProjection",
    "NonFiniteActivationError",
    "PlannerConfig",
    "PlannerError",
    "ProjectionStack",
    "ResolutionMismatchError",
    "VARIANT_IMAGE_PLANE_HOMOGRAPHY",
    "VARIANT_MULTI_BRANCH_BEV",
    "VARIANT_SINGLE_BRANCH_BEV",
    "VARIANTS",
    "WaypointPlanner",
    "project_to_bev",
    "spatial_softmax",
    "BCE_EPS",
    "LossTerms",
    "compute_loss",
    "per_sample_ade",
    "quality_bce",
    "quality_target_for",
    "waypoint_l1",
    "CheckpointConfigError",
    "CheckpointError",
    "load_checkpoint",
    "model_fingerprint",
    "save_checkpoint",
    "state_fingerprint",
]
