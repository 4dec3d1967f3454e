"""Demonstration dataset generation: labeled, unlabeled, and eval splits.

Splits come from disjoint world families (bit-packed seed ranges), so no map
is ever shared between them:

* labeled: fixed nominal camera, daytime, expert targets recorded.
* unlabeled: per-episode randomized camera and appearance, frames only
  (stands in for diverse web video).
* eval: unseen worlds with randomized camera and appearance, with targets,
  i.e. the shifted evaluation split.

Expert rollouts inject brief steering perturbations so recorded states cover
small lane offsets while the targets keep pointing back to the lane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath
from typing import List, Optional, Tuple

import numpy as np

from ..core.manifest import (
    DatasetManifest,
    ManifestRecord,
    labeled_record,
    save_image,
    unlabeled_record,
    write_manifest,
)
from ..core.types import CameraSpec, Command
from .camera import render
from .expert import ExpertConfig, SpeedProfile, expert_action, expert_plan
from .geometry import rects_overlap, to_ego_frame, wrap_angle
from .world import Appearance, WorldConfig, WorldError, WorldState, build_world, step

FAMILY_LABELED = 0
FAMILY_UNLABELED = 1
FAMILY_EVAL = 2
FAMILY_ROUTES = 3


class ExpertCollisionError(WorldError):
    """Expert rollout overlapped an agent while generating labeled data."""


@dataclass(frozen=True)
class CameraRandomization:
    height_range: Tuple[float, float] = (1.2, 2.2)
    pitch_range: Tuple[float, float] = (-8.0, 8.0)
    fov_range: Tuple[float, float] = (50.0, 90.0)

    def sample(self, rng: np.random.Generator, width: int, height: int) -> CameraSpec:
        return CameraSpec(
            height_m=float(rng.uniform(*self.height_range)),
            pitch_deg=float(rng.uniform(*self.pitch_range)),
            fov_deg=float(rng.uniform(*self.fov_range)),
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class SplitConfig:
    name: str
    frames: int
    randomize_camera: bool
    randomize_appearance: bool
    labeled: bool
    perturb: bool = True


@dataclass(frozen=True)
class GenerateConfig:
    image_width: int = 128
    image_height: int = 72
    num_waypoints: int = 5
    waypoint_period: float = 0.5
    frame_period: float = 0.5
    dt: float = 0.05
    warmup_s: float = 1.0
    max_episode_s: float = 90.0
    end_margin: float = 6.0
    agent_record_radius: float = 45.0
    labeled_frames: int = 2000
    unlabeled_frames: int = 20000
    eval_frames: int = 1000
    nominal_camera_height: float = 1.5
    nominal_camera_pitch: float = 4.0
    nominal_camera_fov: float = 70.0
    camera_randomization: CameraRandomization = CameraRandomization()
    world: WorldConfig = WorldConfig()
    expert: ExpertConfig = ExpertConfig()
    perturb_interval: Tuple[float, float] = (4.0, 8.0)
    perturb_duration: Tuple[float, float] = (0.5, 1.1)
    perturb_magnitude: Tuple[float, float] = (0.12, 0.30)

    def nominal_camera(self) -> CameraSpec:
        return CameraSpec(
            height_m=self.nominal_camera_height,
            pitch_deg=self.nominal_camera_pitch,
            fov_deg=self.nominal_camera_fov,
            width=self.image_width,
            height=self.image_height,
        )


def family_seed(master_seed: int, family: int, episode: int) -> int:
    """Bit-packed world seed; families never collide for a given master seed."""
    return ((master_seed & 0x3FFFF) << 22) | ((family & 0x3) << 20) | (episode & 0xFFFFF)


@dataclass
class FrameData:
    image: np.ndarray  # uint8 HxWx3
    speed: float
    command: Command
    waypoints: Optional[np.ndarray]
    nearby_agents: Optional[list]


def _future_agent_boxes(
    world: WorldState, config: GenerateConfig
) -> Optional[list]:
    """Agent footprints at each future waypoint time, in the current ego frame."""
    if not world.agents:
        return None
    ego = world.ego
    near = [
        a
        for a in world.agents
        if math.hypot(*(np.array(a.pose_at(world.time)[:2]) - [ego.x, ego.y]))
        <= config.agent_record_radius
    ]
    if not near:
        return None
    out = []
    for k in range(1, config.num_waypoints + 1):
        t_k = world.time + k * config.waypoint_period
        boxes = []
        for a in near:
            x, y, heading = a.pose_at(t_k)
            local = to_ego_frame(np.array([[x, y]]), ego.x, ego.y, ego.heading)[0]
            boxes.append(
                [
                    float(local[0]),
                    float(local[1]),
                    float(wrap_angle(heading - ego.heading)),
                    a.half_length,
                    a.half_width,
                ]
            )
        out.append(boxes)
    return out


def run_episode(
    world: WorldState,
    camera: CameraSpec,
    config: GenerateConfig,
    rng: np.random.Generator,
    labeled: bool,
    perturb: bool = True,
    max_frames: Optional[int] = None,
) -> List[FrameData]:
    """Drive the expert along the route and record frames at a fixed cadence."""
    profile = SpeedProfile(world.route.path, config.expert)
    frames: List[FrameData] = []
    next_record = config.warmup_s
    next_burst = float(rng.uniform(*config.perturb_interval)) if perturb else math.inf
    burst_end = -1.0
    burst_offset = 0.0
    goal_s = world.route.path.length - config.end_margin

    while world.time < config.max_episode_s:
        s0, _ = world.route.path.project(world.ego.x, world.ego.y)
        if s0 >= goal_s:
            break
        steer, throttle, brake = expert_action(world, profile, config.expert)
        if perturb:
            if world.time >= next_burst:
                burst_end = world.time + float(rng.uniform(*config.perturb_duration))
                burst_offset = float(rng.uniform(*config.perturb_magnitude)) * (
                    1.0 if rng.random() < 0.5 else -1.0
                )
                next_burst = burst_end + float(rng.uniform(*config.perturb_interval))
            if world.time < burst_end:
                steer = float(np.clip(steer + burst_offset, -1.0, 1.0))
        step(world, (steer, throttle, brake), config.dt)
        if labeled and world.agents:
            ego_rect = world.ego.footprint(world.vehicle)
            for rect in world.agent_footprints():
                if rects_overlap(ego_rect, rect):
                    raise ExpertCollisionError(
                        f"expert overlapped an agent at t={world.time:.2f}s (seed {world.seed})"
                    )
        if world.time + 1e-9 >= next_record:
            next_record += config.frame_period
            image = render(world, camera)
            image_u8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
            if labeled:
                wps, cmd = expert_plan(
                    world, profile, config.num_waypoints, config.waypoint_period, config.expert
                )
                boxes = _future_agent_boxes(world, config)
            else:
                wps, boxes = None, None
                cmd = Command.FORWARD
            frames.append(
                FrameData(
                    image=image_u8,
                    speed=world.ego.speed,
                    command=cmd,
                    waypoints=wps,
                    nearby_agents=boxes,
                )
            )
            if max_frames is not None and len(frames) >= max_frames:
                break
    return frames


def _generate_split(
    out_dir: FsPath,
    master_seed: int,
    family: int,
    split: SplitConfig,
    config: GenerateConfig,
) -> DatasetManifest:
    records: List[ManifestRecord] = []
    episode = 0
    nominal = config.nominal_camera()
    while len(records) < split.frames:
        rng = np.random.default_rng([master_seed, family, episode])
        world_seed = family_seed(master_seed, family, episode)
        appearance = (
            Appearance.randomized(rng) if split.randomize_appearance else Appearance.day()
        )
        world = build_world(world_seed, config.world, appearance=appearance)
        camera = (
            config.camera_randomization.sample(rng, config.image_width, config.image_height)
            if split.randomize_camera
            else nominal
        )
        frames = run_episode(
            world,
            camera,
            config,
            rng,
            labeled=split.labeled,
            perturb=split.perturb,
            max_frames=split.frames - len(records),
        )
        episode_id = f"{split.name}-{episode:04d}"
        for i, frame in enumerate(frames):
            rel = f"images/{split.name}/{episode_id}/{i:04d}.png"
            save_image(frame.image, out_dir / rel)
            if split.labeled:
                records.append(
                    labeled_record(
                        image=rel,
                        episode_id=episode_id,
                        frame_index=i,
                        speed=frame.speed,
                        command=frame.command,
                        waypoints=frame.waypoints,
                        nearby_agents=frame.nearby_agents,
                    )
                )
            else:
                records.append(unlabeled_record(rel, episode_id, i))
        episode += 1
        if episode > 10000:
            raise WorldError("split generation did not terminate")
    return write_manifest(
        records[: split.frames],
        out_dir / f"{split.name}.jsonl",
        split=split.name,
        seed=master_seed,
    )


def generate_dataset(
    out_dir,
    seed: int,
    config: GenerateConfig = GenerateConfig(),
    splits: Optional[List[SplitConfig]] = None,
) -> Tuple[DatasetManifest, ...]:
    """Generate the labeled / unlabeled / eval splits under ``out_dir``.

    Fully deterministic: (seed, config) fixes every byte of images and
    manifests.
    """
    out_dir = FsPath(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if splits is None:
        splits = [
            SplitConfig("labeled", config.labeled_frames, False, False, True),
            SplitConfig("unlabeled", config.unlabeled_frames, True, True, False),
            SplitConfig("eval", config.eval_frames, True, True, True),
        ]
    family_by_name = {
        "labeled": FAMILY_LABELED,
        "unlabeled": FAMILY_UNLABELED,
        "eval": FAMILY_EVAL,
    }
    manifests = []
    for split in splits:
        family = family_by_name.get(split.name, FAMILY_EVAL)
        manifests.append(_generate_split(out_dir, seed, family, split, config))
    return tuple(manifests)


def closed_loop_world(
    master_seed: int,
    route_index: int,
    config: GenerateConfig = GenerateConfig(),
    appearance: Optional[Appearance] = None,
) -> WorldState:
    """Held-out world for closed-loop evaluation routes (its own family)."""
    world_seed = family_seed(master_seed, FAMILY_ROUTES, route_index)
    return build_world(world_seed, config.world, appearance=appearance)
