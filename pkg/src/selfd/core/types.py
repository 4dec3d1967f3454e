"""Domain types shared across the pipeline.

Coordinate conventions used everywhere in this package:

* BEV frame: ego-centric, meters. Axis 0 points forward, axis 1 points
  leftward, ego at the origin at prediction time.
* Image frame: H x W x 3 float array with intensities in [0, 1].
* Waypoints are spatio-temporal: waypoint k is the target ego position
  k * waypoint_period seconds into the future.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

import numpy as np

# Number of future waypoints in a plan and their temporal spacing.
DEFAULT_NUM_WAYPOINTS = 5
DEFAULT_WAYPOINT_PERIOD = 0.5  # seconds


class Command(IntEnum):
    """Discrete navigation intent selecting a conditional branch."""

    LEFT = 1
    FORWARD = 2
    RIGHT = 3


COMMANDS = (Command.LEFT, Command.FORWARD, Command.RIGHT)


class SamplingKind(IntEnum):
    """How hypothetical (speed, command) inputs were drawn for a pseudo-label."""

    UNIFORM = 1
    PRIOR = 2


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole forward camera: mount height, downward pitch, horizontal fov.

    Shared by the renderer (world to image) and by the fixed-homography
    planner head (image to ground plane), so it lives here rather than in
    either module.
    """

    height_m: float = 1.5
    pitch_deg: float = 2.0  # positive pitches the optical axis down
    fov_deg: float = 70.0
    width: int = 128
    height: int = 72

    def __post_init__(self):
        if self.height_m <= 0:
            raise ValueError(f"camera height must be > 0, got {self.height_m}")
        if not (20.0 < self.fov_deg < 120.0):
            raise ValueError(f"fov must be in (20, 120) degrees, got {self.fov_deg}")

    @property
    def focal_px(self) -> float:
        """Focal length in pixels (square pixels, horizontal fov)."""
        return (self.width / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)


@dataclass(frozen=True)
class Observation:
    """One planner input: forward camera image, ego speed, navigation command."""

    image: np.ndarray  # H x W x 3, float, intensities in [0, 1]
    speed: float  # m/s, >= 0
    command: Command

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got shape {self.image.shape}")
        if self.speed < 0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")


@dataclass(frozen=True)
class WaypointPlan:
    """K ordered future waypoints in ego-centric BEV meters plus a quality scalar."""

    waypoints: np.ndarray  # K x 2, (forward, leftward) meters
    quality: float  # confidence in [0, 1]

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=np.float64)
        object.__setattr__(self, "waypoints", wp)
        if wp.ndim != 2 or wp.shape[1] != 2:
            raise ValueError(f"waypoints must be Kx2, got shape {wp.shape}")

    @property
    def num_waypoints(self) -> int:
        return int(self.waypoints.shape[0])


@dataclass(frozen=True)
class LabeledSample:
    """Observation paired with a ground-truth plan, as recorded from the expert.

    ``nearby_agents`` holds the future footprints of other vehicles for the
    open-loop collision metric: entry k is a list of oriented rectangles
    ``(center_fwd, center_left, heading, half_length, half_width)`` expressed
    in the ego frame at prediction time, giving each agent's pose at the time
    of waypoint k.
    """

    observation: Observation
    target: WaypointPlan  # quality field is 1.0 by convention for ground truth
    episode_id: str
    frame_index: int
    nearby_agents: Optional[list] = None  # [K][n_agents][5] or None


@dataclass(frozen=True)
class PseudoLabeledSample:
    """Teacher-generated plan for an unlabeled frame with sampled inputs."""

    image_path: str
    sampled_speed: float
    sampled_command: Command
    pseudo_plan: WaypointPlan  # quality is the teacher's estimate, not 1
    teacher_id: str
    sampling_strategy: SamplingKind
    episode_id: str = ""
    frame_index: int = 0


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of invariant checks; ``violation`` names the first failure."""

    ok: bool
    violation: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


_OK = ValidationResult(True)


def _check_plan(plan: WaypointPlan, expected_k: Optional[int]) -> Optional[str]:
    if expected_k is not None and plan.num_waypoints != expected_k:
        return "waypoint-count"
    if not np.all(np.isfinite(plan.waypoints)):
        return "waypoint-finite"
    if not (0.0 <= plan.quality <= 1.0) or not math.isfinite(plan.quality):
        return "quality-range"
    return None


def validate_sample(
    sample: Union[LabeledSample, PseudoLabeledSample],
    expected_k: Optional[int] = DEFAULT_NUM_WAYPOINTS,
    speed_range: Optional[tuple] = None,
) -> ValidationResult:
    """Check a sample's invariants, returning ok or the first violation by name.

    ``speed_range`` is the configured (lo, hi) sampling range; it only applies
    to pseudo-labeled samples and is skipped when None.
    """
    if isinstance(sample, LabeledSample):
        obs = sample.observation
        if obs.speed < 0 or not math.isfinite(obs.speed):
            return ValidationResult(False, "speed-nonnegative")
        if obs.command not in COMMANDS:
            return ValidationResult(False, "command-code")
        bad = _check_plan(sample.target, expected_k)
        if bad:
            return ValidationResult(False, bad)
        return _OK
    if isinstance(sample, PseudoLabeledSample):
        if sample.sampled_command not in COMMANDS:
            return ValidationResult(False, "command-code")
        if not math.isfinite(sample.sampled_speed) or sample.sampled_speed < 0:
            return ValidationResult(False, "speed-nonnegative")
        if speed_range is not None:
            lo, hi = speed_range
            if not (lo <= sample.sampled_speed <= hi):
                return ValidationResult(False, "speed-range")
        bad = _check_plan(sample.pseudo_plan, expected_k)
        if bad:
            return ValidationResult(False, bad)
        return _OK
    return ValidationResult(False, "unknown-sample-type")
