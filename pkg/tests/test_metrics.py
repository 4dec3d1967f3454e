import math

import numpy as np
import pytest

from selfd.metrics import (
    NotComputableError,
    ade,
    collision_rate,
    displacement_errors,
    fde,
    plan_collides,
)
from selfd.sim import OrientedRect, point_in_rect, rects_overlap


def test_identity_gives_zero():
    pts = np.random.default_rng(0).normal(size=(5, 2))
    assert ade(pts, pts) == 0.0
    assert fde(pts, pts) == 0.0


def test_three_four_five_offset():
    gt = np.random.default_rng(1).normal(size=(5, 2))
    pred = gt + np.array([3.0, 4.0])
    assert ade(pred, gt) == pytest.approx(5.0)
    assert fde(pred, gt) == pytest.approx(5.0)


def test_count_mismatch_raises():
    with pytest.raises(ValueError):
        ade(np.zeros((4, 2)), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        fde(np.zeros((4, 2)), np.zeros((5, 2)))


def loop_ade_fde(pred, gt):
    errs = [math.hypot(p[0] - g[0], p[1] - g[1]) for p, g in zip(pred, gt)]
    return sum(errs) / len(errs), errs[-1]


def test_random_pairs_match_scalar_loop_oracle():
    rng = np.random.default_rng(2)
    for _ in range(300):
        k = int(rng.integers(1, 8))
        pred = rng.normal(size=(k, 2))
        gt = rng.normal(size=(k, 2))
        want_ade, want_fde = loop_ade_fde(pred, gt)
        assert abs(ade(pred, gt) - want_ade) < 1e-9
        assert abs(fde(pred, gt) - want_fde) < 1e-9


def test_batched_displacement_errors_match_single():
    rng = np.random.default_rng(3)
    preds = rng.normal(size=(10, 5, 2))
    gts = rng.normal(size=(10, 5, 2))
    a, f = displacement_errors(preds, gts)
    for i in range(10):
        assert a[i] == pytest.approx(ade(preds[i], gts[i]), abs=1e-12)
        assert f[i] == pytest.approx(fde(preds[i], gts[i]), abs=1e-12)


def test_rigid_transform_invariance():
    rng = np.random.default_rng(4)
    pred = rng.normal(size=(5, 2))
    gt = rng.normal(size=(5, 2))
    theta = 0.7
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shift = np.array([10.0, -3.0])
    assert ade(pred @ rot.T + shift, gt @ rot.T + shift) == pytest.approx(ade(pred, gt))
    assert fde(pred @ rot.T + shift, gt @ rot.T + shift) == pytest.approx(fde(pred, gt))


def brute_force_point_in_rect(px, py, rect, inflate):
    """Corner-free re-derivation: rotate the point into the rect frame."""
    dx, dy = px - rect.cx, py - rect.cy
    c, s = math.cos(-rect.heading), math.sin(-rect.heading)
    lx = c * dx - s * dy
    ly = s * dx + c * dy
    return abs(lx) <= rect.half_length + inflate and abs(ly) <= rect.half_width + inflate


def test_point_in_rect_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        rect = OrientedRect(
            cx=float(rng.uniform(-10, 10)),
            cy=float(rng.uniform(-10, 10)),
            heading=float(rng.uniform(-math.pi, math.pi)),
            half_length=float(rng.uniform(0.5, 4)),
            half_width=float(rng.uniform(0.3, 2)),
        )
        px, py = rng.uniform(-12, 12, size=2)
        inflate = float(rng.uniform(0, 2))
        assert bool(point_in_rect(px, py, rect, inflate)) == brute_force_point_in_rect(
            px, py, rect, inflate
        )


def test_no_agents_means_zero_collision_rate():
    plans = [np.zeros((5, 2)) for _ in range(4)]
    assert collision_rate(plans, [None] * 4) == 0.0


def test_waypoint_at_rect_center_collides():
    wps = np.array([[5.0, 0.0]] + [[50.0, 50.0]] * 4)
    boxes = [[[5.0, 0.0, 0.3, 2.0, 1.0]]] + [[] for _ in range(4)]
    assert plan_collides(wps, boxes, ego_halfwidth=1.0)
    assert collision_rate([wps], [boxes]) == 1.0


def test_collision_uses_matching_time_index():
    # agent sits at waypoint-1's position but only at time 2: no collision
    wps = np.array([[5.0, 0.0], [10.0, 0.0]])
    boxes = [[], [[5.0, 0.0, 0.0, 1.0, 0.5]]]
    assert not plan_collides(wps, boxes, ego_halfwidth=0.1)
    boxes_t1 = [[[5.0, 0.0, 0.0, 1.0, 0.5]], []]
    assert plan_collides(wps, boxes_t1, ego_halfwidth=0.1)


def test_randomized_collision_rate_matches_exhaustive_oracle():
    rng = np.random.default_rng(6)
    plans, annotations, want = [], [], 0
    n = 400
    for _ in range(n):
        k = 5
        wps = rng.uniform(-8, 8, size=(k, 2))
        boxes = []
        for t in range(k):
            row = []
            for _ in range(int(rng.integers(0, 3))):
                row.append(
                    [
                        float(rng.uniform(-8, 8)),
                        float(rng.uniform(-8, 8)),
                        float(rng.uniform(-math.pi, math.pi)),
                        float(rng.uniform(0.5, 3)),
                        float(rng.uniform(0.3, 1.5)),
                    ]
                )
            boxes.append(row)
        ego_hw = 1.0
        hit = any(
            brute_force_point_in_rect(
                wps[t][0], wps[t][1], OrientedRect(*box), ego_hw
            )
            for t in range(k)
            for box in boxes[t]
        )
        want += hit
        plans.append(wps)
        annotations.append(boxes)
    assert collision_rate(plans, annotations, ego_halfwidth=1.0) == pytest.approx(want / n)


def test_collision_rate_monotone_in_ego_halfwidth():
    rng = np.random.default_rng(7)
    plans, annotations = [], []
    for _ in range(200):
        wps = rng.uniform(-6, 6, size=(5, 2))
        boxes = [
            [[float(rng.uniform(-6, 6)), float(rng.uniform(-6, 6)), 0.0, 1.0, 0.5]]
            for _ in range(5)
        ]
        plans.append(wps)
        annotations.append(boxes)
    rates = [collision_rate(plans, annotations, hw) for hw in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(a <= b for a, b in zip(rates, rates[1:]))


def test_empty_sample_set_not_computable():
    with pytest.raises(NotComputableError):
        collision_rate([], [])


def test_rects_overlap_sat_cases():
    a = OrientedRect(0, 0, 0, 2, 1)
    assert rects_overlap(a, OrientedRect(1.0, 0.5, 0.3, 2, 1))
    assert not rects_overlap(a, OrientedRect(10, 0, 0, 2, 1))
    # corner-on-corner diagonal case
    b = OrientedRect(2.8, 1.4, math.pi / 4, 1.0, 0.5)
    assert rects_overlap(a, b) == rects_overlap(b, a)
