"""PID waypoint-following controller: plan + current speed -> pedal/steer.

Lateral control acts on the heading error toward a lookahead waypoint;
longitudinal control tracks a target speed derived from the spacing of
consecutive waypoints (plans are spatio-temporal at a fixed period). Outputs
always saturate to steer in [-1, 1], throttle/brake in [0, 1], and throttle
and brake are never both positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .core.types import WaypointPlan


@dataclass(frozen=True)
class PIDConfig:
    lateral_kp: float = 1.15
    lateral_ki: float = 0.05
    lateral_kd: float = 0.10
    long_kp: float = 0.55
    long_ki: float = 0.04
    long_kd: float = 0.0
    lookahead_index: int = 2  # 1-based waypoint used for the heading error
    speed_gaps: int = 2  # leading waypoint gaps averaged into the target speed
    waypoint_period: float = 0.5
    integral_clamp: float = 1.0
    stop_speed: float = 0.15  # target below this engages a standing brake

    def __post_init__(self):
        if self.lookahead_index < 1:
            raise ValueError("lookahead_index must be >= 1")
        if min(self.lateral_kp, self.lateral_ki, self.lateral_kd) < 0:
            raise ValueError("lateral gains must be >= 0")
        if min(self.long_kp, self.long_ki, self.long_kd) < 0:
            raise ValueError("longitudinal gains must be >= 0")


@dataclass
class PIDState:
    lateral_integral: float = 0.0
    prev_lateral_error: float = 0.0
    speed_integral: float = 0.0
    prev_speed_error: float = 0.0
    initialized: bool = False


def target_speed_from_plan(plan: WaypointPlan, config: PIDConfig) -> float:
    """Mean spacing of the leading waypoint gaps divided by the plan period."""
    wps = np.asarray(plan.waypoints)
    pts = np.concatenate([np.zeros((1, 2)), wps], axis=0)
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    n = min(config.speed_gaps, len(gaps))
    return float(gaps[:n].mean() / config.waypoint_period)


def control(
    plan: WaypointPlan,
    current_speed: float,
    config: PIDConfig,
    state: PIDState,
    dt: float = 0.05,
) -> Tuple[float, float, float, PIDState]:
    """One controller tick; returns (steer, throttle, brake, new_state)."""
    wps = np.asarray(plan.waypoints)
    look = wps[min(config.lookahead_index, len(wps)) - 1]
    if np.hypot(look[0], look[1]) < 1e-6:
        alpha = 0.0
    else:
        alpha = math.atan2(look[1], max(look[0], 0.3))

    lat_int = float(
        np.clip(state.lateral_integral + alpha * dt, -config.integral_clamp, config.integral_clamp)
    )
    d_alpha = (alpha - state.prev_lateral_error) / dt if state.initialized else 0.0
    steer = config.lateral_kp * alpha + config.lateral_ki * lat_int + config.lateral_kd * d_alpha
    steer = float(np.clip(steer, -1.0, 1.0))

    v_target = target_speed_from_plan(plan, config)
    err = v_target - current_speed
    spd_int = float(
        np.clip(state.speed_integral + err * dt, -config.integral_clamp, config.integral_clamp)
    )
    d_err = (err - state.prev_speed_error) / dt if state.initialized else 0.0
    u = config.long_kp * err + config.long_ki * spd_int + config.long_kd * d_err
    if v_target <= config.stop_speed:
        throttle, brake = 0.0, max(float(np.clip(-u, 0.0, 1.0)), 0.3)
    elif u >= 0:
        throttle, brake = float(np.clip(u, 0.0, 1.0)), 0.0
    else:
        throttle, brake = 0.0, float(np.clip(-u, 0.0, 1.0))

    new_state = PIDState(
        lateral_integral=lat_int,
        prev_lateral_error=alpha,
        speed_integral=spd_int,
        prev_speed_error=err,
        initialized=True,
    )
    return steer, throttle, brake, new_state
