"""2D geometry primitives: poses, oriented rectangles, sampled paths."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi


def to_ego_frame(points: np.ndarray, x: float, y: float, heading: float) -> np.ndarray:
    """World points (N, 2) into the frame at (x, y, heading): x fwd, y left."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    c, s = math.cos(heading), math.sin(heading)
    dx = pts[:, 0] - x
    dy = pts[:, 1] - y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


def to_world_frame(points: np.ndarray, x: float, y: float, heading: float) -> np.ndarray:
    """Inverse of :func:`to_ego_frame`."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    c, s = math.cos(heading), math.sin(heading)
    return np.stack(
        [x + c * pts[:, 0] - s * pts[:, 1], y + s * pts[:, 0] + c * pts[:, 1]], axis=1
    )


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle footprint: center, heading, half extents (meters)."""

    cx: float
    cy: float
    heading: float
    half_length: float
    half_width: float

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        local = np.array(
            [
                [self.half_length, self.half_width],
                [self.half_length, -self.half_width],
                [-self.half_length, -self.half_width],
                [-self.half_length, self.half_width],
            ]
        )
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.heading, self.half_length, self.half_width)


def point_in_rect(px, py, rect: OrientedRect, inflate: float = 0.0):
    """Whether point(s) lie inside the rectangle inflated by ``inflate``.

    Accepts scalars or arrays; boundary points count as inside.
    """
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    dx = np.asarray(px, dtype=np.float64) - rect.cx
    dy = np.asarray(py, dtype=np.float64) - rect.cy
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return (np.abs(lx) <= rect.half_length + inflate) & (
        np.abs(ly) <= rect.half_width + inflate
    )


def rects_overlap(a: OrientedRect, b: OrientedRect) -> bool:
    """Oriented rectangle intersection via the separating axis theorem."""
    ca, cb = a.corners(), b.corners()
    for rect in (a, b):
        c, s = math.cos(rect.heading), math.sin(rect.heading)
        for axis in ((c, s), (-s, c)):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


class Path:
    """Polyline sampled at a fixed arc-length step with cached headings.

    Supports arc-length lookup (point, heading, curvature) and projection of
    a point onto the path. Optionally closed (loops wrap arc length).
    """

    def __init__(self, points: np.ndarray, closed: bool = False):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError(f"path needs at least 2 points, got shape {pts.shape}")
        self.points = pts
        self.closed = closed
        segs = np.diff(pts, axis=0)
        seg_len = np.linalg.norm(segs, axis=1)
        if np.any(seg_len <= 0):
            keep = np.concatenate([[True], seg_len > 0])
            pts = pts[keep]
            self.points = pts
            segs = np.diff(pts, axis=0)
            seg_len = np.linalg.norm(segs, axis=1)
        self.cum_s = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cum_s[-1])
        self.headings = np.arctan2(segs[:, 1], segs[:, 0])

    def _wrap_s(self, s):
        if self.closed:
            return np.mod(s, self.length)
        return np.clip(s, 0.0, self.length)

    def point_at(self, s):
        """Point(s) at arc length ``s`` (clamped, or wrapped when closed)."""
        s = self._wrap_s(np.asarray(s, dtype=np.float64))
        idx = np.clip(np.searchsorted(self.cum_s, s, side="right") - 1, 0, len(self.headings) - 1)
        s0 = self.cum_s[idx]
        seg_len = self.cum_s[idx + 1] - s0
        t = np.where(seg_len > 0, (s - s0) / np.where(seg_len > 0, seg_len, 1.0), 0.0)
        p0 = self.points[idx]
        p1 = self.points[idx + 1]
        return p0 + (p1 - p0) * t[..., None]

    def heading_at(self, s):
        s = self._wrap_s(np.asarray(s, dtype=np.float64))
        idx = np.clip(np.searchsorted(self.cum_s, s, side="right") - 1, 0, len(self.headings) - 1)
        return self.headings[idx]

    def curvature_at(self, s):
        """Discrete curvature |dheading/ds| at arc length ``s``."""
        s = np.asarray(s, dtype=np.float64)
        ds = 1.0
        h1 = self.heading_at(self._wrap_s(s + ds))
        h0 = self.heading_at(self._wrap_s(s - ds))
        return np.abs(wrap_angle(h1 - h0)) / (2 * ds)

    def project(self, x: float, y: float) -> Tuple[float, float]:
        """Arc length and signed lateral offset (left positive) of a point."""
        p = np.array([x, y])
        a = self.points[:-1]
        b = self.points[1:]
        d = b - a
        seg_len_sq = (d * d).sum(axis=1)
        t = np.clip(((p - a) * d).sum(axis=1) / np.where(seg_len_sq > 0, seg_len_sq, 1.0), 0, 1)
        proj = a + t[:, None] * d
        dist_sq = ((p - proj) ** 2).sum(axis=1)
        i = int(np.argmin(dist_sq))
        s = float(self.cum_s[i] + t[i] * math.sqrt(seg_len_sq[i]))
        heading = self.headings[i]
        rel = p - proj[i]
        lateral = float(-math.sin(heading) * rel[0] + math.cos(heading) * rel[1])
        return s, lateral

    def distance_to(self, x: float, y: float) -> float:
        s, _ = self.project(x, y)
        p = self.point_at(s)
        return float(np.hypot(p[0] - x, p[1] - y))


def segment_points(p0, p1, step: float) -> np.ndarray:
    """Sample a straight segment at roughly ``step`` spacing, inclusive ends."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    n = max(int(math.ceil(np.linalg.norm(p1 - p0) / step)), 1)
    t = np.linspace(0.0, 1.0, n + 1)
    return p0 + t[:, None] * (p1 - p0)


def arc_points(center, radius: float, a0: float, a1: float, step: float) -> np.ndarray:
    """Sample a circular arc from angle a0 to a1 at roughly ``step`` spacing."""
    center = np.asarray(center, dtype=np.float64)
    sweep = a1 - a0
    n = max(int(math.ceil(abs(sweep) * radius / step)), 2)
    angles = a0 + sweep * np.linspace(0.0, 1.0, n + 1)
    return center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
