"""Route-following expert: speed profile, waypoint labels, low-level driving.

Label waypoints are points ON the route centerline at the K future time
offsets, obtained by integrating a speed that ramps from the ego's current
speed toward the route profile. They are therefore dynamically feasible and
lie exactly on the route, and they encode recovery back to the lane when the
ego is perturbed sideways.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..core.types import Command
from .geometry import Path, to_ego_frame, wrap_angle
from .world import WorldState


@dataclass(frozen=True)
class ExpertConfig:
    cruise_speed: float = 8.0
    lateral_accel: float = 2.0  # comfort cap; sets curve speeds
    accel: float = 1.5
    decel: float = 2.0
    lookahead_gain: float = 0.7
    lookahead_min: float = 3.5
    lookahead_max: float = 10.0
    speed_kp: float = 0.8
    turn_threshold_deg: float = 15.0
    command_min_horizon: float = 12.0  # meters of route used for intent when slow


class SpeedProfile:
    """Curvature-limited target speed along a route."""

    def __init__(self, path: Path, config: ExpertConfig):
        s = path.cum_s.copy()
        curv = path.curvature_at(s)
        v = np.minimum(
            config.cruise_speed,
            np.sqrt(config.lateral_accel / np.maximum(curv, 1e-6)),
        )
        v[-1] = 0.0  # stop at the route end
        ds = np.diff(s)
        for i in range(len(v) - 2, -1, -1):  # decel-limited backward pass
            v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2 * config.decel * ds[i]))
        for i in range(len(v) - 1):  # accel-limited forward pass
            v[i + 1] = min(v[i + 1], math.sqrt(v[i] ** 2 + 2 * config.accel * ds[i]))
        self.s = s
        self.v = v
        self.path = path

    def v_at(self, s) -> np.ndarray:
        return np.interp(np.clip(s, 0.0, self.s[-1]), self.s, self.v)

    def travel_time(self, s_from: float = 0.0, s_to: float = None) -> float:
        """Time to traverse the route at profile speed (floored at 0.5 m/s)."""
        s_to = self.s[-1] if s_to is None else s_to
        mask = (self.s[:-1] >= s_from) & (self.s[:-1] < s_to)
        ds = np.diff(self.s)[mask]
        vv = np.maximum(0.5, 0.5 * (self.v[:-1] + self.v[1:]))[mask]
        return float((ds / vv).sum())


_PROFILE_CACHE: dict = {}


def route_profile(world: WorldState, config: ExpertConfig) -> SpeedProfile:
    key = (id(world.route.path), config)
    if key not in _PROFILE_CACHE:
        _PROFILE_CACHE[key] = SpeedProfile(world.route.path, config)
    return _PROFILE_CACHE[key]


def integrate_route_positions(
    profile: SpeedProfile,
    s0: float,
    v0: float,
    times: np.ndarray,
    config: ExpertConfig,
    dt: float = 0.05,
) -> np.ndarray:
    """Arc lengths reached at the given future times.

    Speed ramps from ``v0`` toward the profile under the comfort accel/decel
    limits, so the result is consistent with what the expert would drive.
    """
    out = np.zeros(len(times))
    s, v, t = float(s0), float(v0), 0.0
    t_end = float(times[-1])
    i = 0
    while t < t_end - 1e-9:
        target = float(profile.v_at(s))
        dv = np.clip(target - v, -config.decel * dt, config.accel * dt)
        v = max(v + dv, 0.0)
        s = min(s + v * dt, profile.s[-1])
        t += dt
        while i < len(times) and times[i] <= t + 1e-9:
            out[i] = s
            i += 1
    while i < len(times):
        out[i] = s
        i += 1
    return out


def command_for(
    path: Path, s0: float, speed: float, horizon_s: float, config: ExpertConfig
) -> Command:
    """Navigation intent from the route heading change over the horizon.

    The horizon is ``speed * horizon_s`` meters but never less than
    ``command_min_horizon`` so intent is stable when (nearly) stopped.
    """
    horizon_m = max(speed * horizon_s, config.command_min_horizon)
    h0 = float(path.heading_at(s0))
    h1 = float(path.heading_at(min(s0 + horizon_m, path.length)))
    dpsi = float(wrap_angle(h1 - h0))
    if abs(dpsi) < math.radians(config.turn_threshold_deg):
        return Command.FORWARD
    return Command.LEFT if dpsi > 0 else Command.RIGHT


def expert_plan(
    world: WorldState,
    profile: SpeedProfile,
    num_waypoints: int,
    period: float,
    config: ExpertConfig,
) -> Tuple[np.ndarray, Command]:
    """Ground-truth waypoints (ego frame) and command at the current state."""
    ego = world.ego
    path = world.route.path
    s0, _ = path.project(ego.x, ego.y)
    times = np.arange(1, num_waypoints + 1) * period
    arcs = integrate_route_positions(profile, s0, ego.speed, times, config)
    pts_world = path.point_at(arcs)
    wps = to_ego_frame(pts_world, ego.x, ego.y, ego.heading)
    cmd = command_for(path, s0, ego.speed, num_waypoints * period, config)
    return wps, cmd


def expert_action(
    world: WorldState, profile: SpeedProfile, config: ExpertConfig
) -> Tuple[float, float, float]:
    """Pure-pursuit steering plus proportional speed control on the route."""
    ego = world.ego
    path = world.route.path
    veh = world.vehicle
    s0, _ = path.project(ego.x, ego.y)
    lookahead = float(
        np.clip(config.lookahead_gain * ego.speed, config.lookahead_min, config.lookahead_max)
    )
    target = path.point_at(min(s0 + lookahead, path.length))
    local = to_ego_frame(target[None, :], ego.x, ego.y, ego.heading)[0]
    alpha = math.atan2(local[1], max(local[0], 1e-3))
    delta = math.atan2(2.0 * veh.wheelbase * math.sin(alpha), lookahead)
    steer = float(np.clip(delta / math.radians(veh.max_steer_deg), -1.0, 1.0))

    v_target = float(profile.v_at(s0))
    a_des = config.speed_kp * (v_target - ego.speed)
    if a_des >= 0:
        throttle = float(np.clip((a_des + veh.drag * ego.speed) / veh.max_accel, 0.0, 1.0))
        brake = 0.0
    else:
        throttle = 0.0
        brake = float(np.clip(-a_des / veh.max_brake, 0.0, 1.0))
    return steer, throttle, brake
