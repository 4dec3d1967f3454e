"""Open-loop and closed-loop evaluation metrics.

Open loop: average / final L2 displacement error over waypoints and a
collision rate along predicted waypoints against annotated agent footprints.
Closed loop: success rate, route completion, and collision events per 10 km
from rollouts through the PID controller in held-out worlds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .control import PIDConfig, PIDState, control
from .core.types import CameraSpec, Command, Observation
from .sim.camera import render
from .sim.expert import ExpertConfig, SpeedProfile, command_for
from .sim.geometry import OrientedRect, point_in_rect, rects_overlap
from .sim.world import WorldState, step


class NotComputableError(Exception):
    """Raised when a metric's required annotations are absent."""


@dataclass
class MetricsReport:
    """Evaluation summary; closed-loop fields are None for open-loop runs."""

    ade: Optional[float] = None
    fde: Optional[float] = None
    collision_rate: Optional[float] = None
    count: int = 0
    success_rate: Optional[float] = None
    route_completion: Optional[float] = None
    collisions_per_10km: Optional[float] = None
    meters_driven: Optional[float] = None
    split: str = ""

    def to_dict(self) -> dict:
        return {
            "ade": self.ade,
            "fde": self.fde,
            "collision_rate": self.collision_rate,
            "count": self.count,
            "success_rate": self.success_rate,
            "route_completion": self.route_completion,
            "collisions_per_10km": self.collisions_per_10km,
            "meters_driven": self.meters_driven,
            "split": self.split,
        }


def ade(pred: np.ndarray, gt: np.ndarray) -> float:
    """Average L2 displacement error between two (K, 2) waypoint arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"waypoint count mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred: np.ndarray, gt: np.ndarray) -> float:
    """Final L2 displacement error (last waypoint only)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"waypoint count mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def displacement_errors(
    preds: np.ndarray, gts: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample ADE and FDE for stacked (N, K, 2) arrays."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {gts.shape}")
    norms = np.linalg.norm(preds - gts, axis=-1)
    return norms.mean(axis=-1), norms[:, -1]


def plan_collides(
    waypoints: np.ndarray, agent_boxes: Optional[list], ego_halfwidth: float
) -> bool:
    """Whether any waypoint k is inside any agent's rectangle at time k.

    ``agent_boxes`` is the manifest layout: entry k-1 lists rectangles
    (cx, cy, heading, half_length, half_width) at the time of waypoint k,
    in the same frame as the waypoints. Rectangles are inflated by
    ``ego_halfwidth`` on every side.
    """
    if not agent_boxes:
        return False
    wps = np.asarray(waypoints)
    for k, boxes in enumerate(agent_boxes):
        if k >= len(wps) or not boxes:
            continue
        px, py = wps[k]
        for cx, cy, heading, hl, hw in boxes:
            rect = OrientedRect(cx, cy, heading, hl, hw)
            if bool(point_in_rect(px, py, rect, inflate=ego_halfwidth)):
                return True
    return False


def collision_rate(
    plans: Sequence[np.ndarray],
    agents_future: Sequence[Optional[list]],
    ego_halfwidth: float = 1.0,
) -> float:
    """Fraction of samples whose predicted plan hits an annotated agent."""
    if len(plans) == 0:
        raise NotComputableError("collision rate needs at least one sample")
    if len(plans) != len(agents_future):
        raise ValueError("plans and agent annotations must align")
    hits = sum(
        1 for wps, boxes in zip(plans, agents_future) if plan_collides(wps, boxes, ego_halfwidth)
    )
    return hits / len(plans)


@dataclass(frozen=True)
class ClosedLoopConfig:
    dt: float = 0.05
    replan_every: int = 2  # sim steps between planner invocations
    timeout_factor: float = 2.0  # x expert completion time
    offroad_margin: float = 1.0  # meters beyond the drivable area
    teleport_advance: float = 4.0  # recovery placement past the failure point
    event_cooldown: float = 2.0  # seconds after recovery before new events count
    goal_margin: float = 6.0
    ego_halfwidth: float = 1.0
    expert: ExpertConfig = ExpertConfig()


@dataclass
class RouteResult:
    completed: bool
    collisions: int
    meters: float
    completion: float
    duration: float


def rollout_route(
    planner,
    world: WorldState,
    camera: CameraSpec,
    pid: PIDConfig,
    config: ClosedLoopConfig = ClosedLoopConfig(),
) -> RouteResult:
    """Drive one route with the planner through the PID controller.

    Collision events (agent overlap or leaving the drivable area) are logged
    and the ego teleport-recovers onto the route so completion stays
    meaningful.
    """
    path = world.route.path
    profile = SpeedProfile(path, config.expert)
    spawn_s, _ = path.project(world.ego.x, world.ego.y)
    goal_s = path.length - config.goal_margin
    timeout = config.timeout_factor * profile.travel_time(spawn_s, goal_s)
    horizon_s = planner.config.num_waypoints * pid.waypoint_period

    state = PIDState()
    plan = None
    meters = 0.0
    collisions = 0
    max_s = spawn_s
    cooldown_until = -1.0
    steps = 0
    max_steps = int(timeout / config.dt) + 10

    while world.time < timeout and steps < max_steps:
        s_now, _ = path.project(world.ego.x, world.ego.y)
        max_s = max(max_s, s_now)
        if s_now >= goal_s:
            break
        if steps % config.replan_every == 0 or plan is None:
            cmd = command_for(path, s_now, world.ego.speed, horizon_s, config.expert)
            obs = Observation(
                image=render(world, camera),
                speed=world.ego.speed,
                command=cmd,
            )
            plan = planner.plan(obs)
        steer, throttle, brake, state = control(
            plan, world.ego.speed, pid, state, config.dt
        )
        step(world, (steer, throttle, brake), config.dt)
        meters += world.ego.speed * config.dt
        steps += 1

        if world.time >= cooldown_until:
            ego_rect = world.ego.footprint(world.vehicle)
            hit = any(rects_overlap(ego_rect, r) for r in world.agent_footprints())
            offroad = world.off_drivable_distance(world.ego.x, world.ego.y) > config.offroad_margin
            if hit or offroad:
                collisions += 1
                s_rec = min(s_now + config.teleport_advance, goal_s)
                p = path.point_at(s_rec)
                world.ego.x, world.ego.y = float(p[0]), float(p[1])
                world.ego.heading = float(path.heading_at(s_rec))
                world.ego.speed = 0.0
                state = PIDState()
                plan = None
                cooldown_until = world.time + config.event_cooldown

    completed = max_s >= goal_s and collisions == 0
    frac = float(np.clip((max_s - spawn_s) / max(goal_s - spawn_s, 1e-6), 0.0, 1.0))
    return RouteResult(
        completed=completed,
        collisions=collisions,
        meters=meters,
        completion=frac,
        duration=world.time,
    )


def closed_loop_eval(
    planner,
    pid: PIDConfig,
    worlds: Sequence[WorldState],
    camera: CameraSpec,
    config: ClosedLoopConfig = ClosedLoopConfig(),
    split: str = "",
) -> MetricsReport:
    """Aggregate rollout metrics over a set of evaluation routes."""
    results = [rollout_route(planner, w, camera, pid, config) for w in worlds]
    total_m = sum(r.meters for r in results)
    total_coll = sum(r.collisions for r in results)
    return MetricsReport(
        count=len(results),
        success_rate=float(np.mean([r.completed for r in results])),
        route_completion=float(np.mean([r.completion for r in results])),
        collisions_per_10km=total_coll * 10000.0 / max(total_m, 1.0),
        meters_driven=total_m,
        split=split,
    )
