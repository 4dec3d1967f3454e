"""Pinhole forward-view renderer over the flat ground plane.

Rendering is inverse-mapped: every pixel below the horizon is intersected
with the ground plane and colored by sampling the world (grass, road bands,
lane markings, intersection squares, agent rectangles), then fog and the
appearance brightness are applied. Deliberately low-fidelity; the point is
consistent geometry, not photorealism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..core.types import CameraSpec
from .world import Appearance, WorldState

RENDER_MAX_DEPTH = 200.0  # ground intersection clamp, meters

# Pixel-ray ground grids are pure functions of the camera; cache them.
_GRID_CACHE: Dict[Tuple, Tuple[np.ndarray, ...]] = {}

_AGENT_COLORS = np.array(
    [
        [0.75, 0.20, 0.16],
        [0.16, 0.30, 0.65],
        [0.88, 0.86, 0.82],
        [0.12, 0.12, 0.14],
        [0.80, 0.62, 0.15],
        [0.25, 0.55, 0.50],
    ],
    dtype=np.float32,
)


def camera_grid(camera: CameraSpec, max_depth: float = RENDER_MAX_DEPTH):
    """Per-pixel ground intersection in the camera's ego frame.

    Returns (row0, fwd, left, dist): row0 is the first ground row; the arrays
    cover rows [row0:] with forward/leftward meters and planar distance.
    """
    key = (camera, round(max_depth, 6))
    if key in _GRID_CACHE:
        return _GRID_CACHE[key]
    f = camera.focal_px
    phi = math.radians(camera.pitch_deg)
    cx, cy = camera.width / 2.0, camera.height / 2.0
    v = np.arange(camera.height, dtype=np.float64) + 0.5
    u = np.arange(camera.width, dtype=np.float64) + 0.5
    ry = (v - cy) / f
    rx = (u - cx) / f
    down = ry * math.cos(phi) + math.sin(phi)
    hit = down > camera.height_m / max_depth
    row0 = int(np.argmax(hit)) if bool(hit.any()) else camera.height
    if not bool(hit.any()):
        empty = np.zeros((0, camera.width))
        _GRID_CACHE[key] = (row0, empty, empty, empty)
        return _GRID_CACHE[key]
    t = camera.height_m / down[row0:]
    e_fwd = math.cos(phi) - ry[row0:] * math.sin(phi)
    fwd = (t * e_fwd)[:, None] * np.ones_like(rx)[None, :]
    left = t[:, None] * (-rx)[None, :]
    dist = np.hypot(fwd, left)
    _GRID_CACHE[key] = (row0, fwd, left, dist)
    return _GRID_CACHE[key]


def horizon_row(camera: CameraSpec) -> float:
    """Analytic image row of the horizon (may fall outside the image)."""
    f = camera.focal_px
    return camera.height / 2.0 - f * math.tan(math.radians(camera.pitch_deg))


def _hash_texture(xi: np.ndarray, yi: np.ndarray) -> np.ndarray:
    """Deterministic per-meter brightness jitter in [-1, 1]."""
    h = (xi.astype(np.int64) * 73856093) ^ (yi.astype(np.int64) * 19349663)
    return (((h >> 3) & 1023).astype(np.float32) / 511.5) - 1.0


def render(
    world: WorldState,
    camera: CameraSpec,
    appearance: Optional[Appearance] = None,
) -> np.ndarray:
    """Render the ego forward view as an HxWx3 float32 image in [0, 1]."""
    app = appearance if appearance is not None else world.appearance
    cfg = world.config
    ego = world.ego
    H, W = camera.height, camera.width
    img = np.zeros((H, W, 3), dtype=np.float32)

    # Sky gradient from the top down to the horizon.
    ramp = np.linspace(0.0, 1.0, H, dtype=np.float32)[:, None]
    sky = (1 - ramp) * np.array(app.sky_top, dtype=np.float32) + ramp * np.array(
        app.sky_bottom, dtype=np.float32
    )
    img[:] = sky[:, None, :]

    row0, fwd, left, dist = camera_grid(camera)
    if fwd.shape[0] == 0:
        return np.clip(img, 0.0, 1.0)

    c, s = math.cos(ego.heading), math.sin(ego.heading)
    xw = ego.x + c * fwd - s * left
    yw = ego.y + s * fwd + c * left

    tex = _hash_texture(np.floor(xw * 1.5), np.floor(yw * 1.5)) * 0.035
    ground = np.empty((*xw.shape, 3), dtype=np.float32)
    ground[:] = np.array(app.grass, dtype=np.float32)
    ground += tex[..., None]

    cull = app.fog_end + 30.0
    road_rgb = np.array(app.road, dtype=np.float32)
    mark_rgb = np.array(app.marking, dtype=np.float32)
    road_mask = np.zeros(xw.shape, dtype=bool)
    mark_mask = np.zeros(xw.shape, dtype=bool)
    ego_pt = np.array([ego.x, ego.y])

    for e in world.network.edges:
        a, b = tuple(e)
        pa = world.network.node_pos[a]
        pb = world.network.node_pos[b]
        d = pb - pa
        length = float(np.linalg.norm(d))
        u_vec = d / length
        t_ego = float(np.clip(np.dot(ego_pt - pa, d) / (length * length), 0.0, 1.0))
        if np.linalg.norm(ego_pt - (pa + t_ego * d)) > cull:
            continue
        rel_x = xw - pa[0]
        rel_y = yw - pa[1]
        s_along = rel_x * u_vec[0] + rel_y * u_vec[1]
        d_perp = rel_x * -u_vec[1] + rel_y * u_vec[0]
        on_body = (s_along >= 0.0) & (s_along <= length)
        road_mask |= on_body & (np.abs(d_perp) <= cfg.road_halfwidth)
        in_lane_span = (s_along >= cfg.setback) & (s_along <= length - cfg.setback)
        dashes = np.mod(s_along, 4.0) < 2.2
        mark_mask |= in_lane_span & dashes & (np.abs(d_perp) <= 0.12)
        edge_line = np.abs(np.abs(d_perp) - (cfg.road_halfwidth - 0.35)) <= 0.10
        mark_mask |= in_lane_span & edge_line

    for pos in world.network.node_pos.values():
        if np.linalg.norm(ego_pt - pos) > cull:
            continue
        square = (np.abs(xw - pos[0]) <= cfg.setback) & (np.abs(yw - pos[1]) <= cfg.setback)
        road_mask |= square
        mark_mask &= ~square

    ground[road_mask] = road_rgb + tex[road_mask, None] * 0.5
    ground[mark_mask & road_mask] = mark_rgb

    for agent in world.agents:
        rect = agent.footprint_at(world.time)
        if math.hypot(rect.cx - ego.x, rect.cy - ego.y) > cull:
            continue
        inside = (
            np.abs(
                (xw - rect.cx) * math.cos(rect.heading)
                + (yw - rect.cy) * math.sin(rect.heading)
            )
            <= rect.half_length
        ) & (
            np.abs(
                -(xw - rect.cx) * math.sin(rect.heading)
                + (yw - rect.cy) * math.cos(rect.heading)
            )
            <= rect.half_width
        )
        if inside.any():
            color = _AGENT_COLORS[agent.color_seed % len(_AGENT_COLORS)]
            ground[inside] = color

    ground *= app.brightness
    # Fog fade into the horizon color hides the far clamp.
    fog = np.clip((dist - app.fog_start) / (app.fog_end - app.fog_start), 0.0, 1.0)
    fog = (fog * fog).astype(np.float32)[..., None]
    horizon_rgb = sky[min(max(row0, 0), H - 1)].reshape(1, 1, 3)
    img[row0:] = ground * (1 - fog) + horizon_rgb * fog
    return np.clip(img, 0.0, 1.0)
