from .geometry import OrientedRect, Path, point_in_rect, rects_overlap, to_ego_frame, to_world_frame, wrap_angle
from .world import (
    Agent,
    Appearance,
    EgoState,
    InfeasibleWorldError,
    RoadNetwork,
    RouteInfo,
    VehicleParams,
    WorldConfig,
    WorldError,
    WorldState,
    build_world,
    step,
)
from .camera import camera_grid, horizon_row, render
from .expert import (
    ExpertConfig,
    SpeedProfile,
    command_for,
    expert_action,
    expert_plan,
    integrate_route_positions,
    route_profile,
)
from .datasets import (
    CameraRandomization,
    ExpertCollisionError,
    FrameData,
    GenerateConfig,
    SplitConfig,
    closed_loop_world,
    family_seed,
    generate_dataset,
    run_episode,
)

__all__ = [
    "OrientedRect",
    "Path",
    "point_in_rect",
    "rects_overlap",
    "to_ego_frame",
    "to_world_frame",
    "wrap_angle",
    "Agent",
    "Appearance",
    "EgoState",
    "InfeasibleWorldError",
    "RoadNetwork",
    "RouteInfo",
    "VehicleParams",
    "WorldConfig",
    "WorldError",
    "WorldState",
    "build_world",
    "step",
    "camera_grid",
    "horizon_row",
    "render",
    "ExpertConfig",
    "SpeedProfile",
    "command_for",
    "expert_action",
    "expert_plan",
    "integrate_route_positions",
    "route_profile",
    "CameraRandomization",
    "ExpertCollisionError",
    "FrameData",
    "GenerateConfig",
    "SplitConfig",
    "closed_loop_world",
    "family_seed",
    "generate_dataset",
    "run_episode",
]
