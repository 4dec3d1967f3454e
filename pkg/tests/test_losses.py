import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from selfd.planner import (
    BCE_EPS,
    compute_loss,
    per_sample_ade,
    quality_bce,
    quality_target_for,
    waypoint_l1,
)


def oracle_loss(pred, target, sigma, q_target, lam):
    """Scalar loop re-computation of the combined objective."""
    total_abs = 0.0
    n = 0
    for p_row, t_row in zip(pred, target):
        for p, t in zip(p_row, t_row):
            for a, b in zip(p, t):
                total_abs += abs(a - b)
                n += 1
    plan = total_abs / n
    bce = 0.0
    for s, q in zip(sigma, q_target):
        s = min(max(s, BCE_EPS), 1 - BCE_EPS)
        bce += -(q * math.log(s) + (1 - q) * math.log(1 - s))
    bce /= len(sigma)
    return plan + lam * bce, plan, bce


def test_identity_prediction_has_zero_loss():
    wps = torch.randn(2, 5, 2, dtype=torch.float64)
    sigma = torch.full((2,), 1.0 - 1e-9, dtype=torch.float64)
    terms = compute_loss(wps, wps.clone(), sigma, torch.ones(2), lambda_quality=0.1)
    assert terms.plan.item() == 0.0
    assert terms.quality.item() == pytest.approx(0.0, abs=1e-6)


def test_unit_forward_offset_gives_half():
    target = torch.randn(3, 5, 2, dtype=torch.float64)
    pred = target.clone()
    pred[..., 0] += 1.0
    terms = compute_loss(pred, target, torch.full((3,), 0.5), torch.zeros(3), 0.0)
    assert terms.total.item() == pytest.approx(0.5)


def test_random_cases_match_loop_oracle():
    rng = np.random.default_rng(6)
    for _ in range(200):
        b = int(rng.integers(1, 5))
        k = int(rng.integers(1, 6))
        pred = rng.normal(size=(b, k, 2))
        target = rng.normal(size=(b, k, 2))
        sigma = rng.uniform(1e-4, 1 - 1e-4, size=b)
        q = rng.integers(0, 2, size=b).astype(float)
        lam = float(rng.uniform(0, 2))
        want_total, want_plan, want_bce = oracle_loss(pred, target, sigma, q, lam)
        terms = compute_loss(
            torch.from_numpy(pred),
            torch.from_numpy(target),
            torch.from_numpy(sigma),
            torch.from_numpy(q),
            lam,
        )
        assert terms.total.item() == pytest.approx(want_total, abs=1e-9)
        assert terms.plan.item() == pytest.approx(want_plan, abs=1e-9)
        assert terms.quality.item() == pytest.approx(want_bce, abs=1e-9)


def test_bce_is_safe_at_saturated_quality():
    sigma = torch.tensor([0.0, 1.0], dtype=torch.float64)
    out = quality_bce(sigma, torch.tensor([1.0, 0.0], dtype=torch.float64))
    assert torch.isfinite(out)


def test_plan_loss_translation_covariant():
    rng = np.random.default_rng(7)
    pred = torch.from_numpy(rng.normal(size=(4, 5, 2)))
    target = torch.from_numpy(rng.normal(size=(4, 5, 2)))
    shift = torch.tensor([3.7, -1.2], dtype=torch.float64)
    base = waypoint_l1(pred, target)
    moved = waypoint_l1(pred + shift, target + shift)
    assert moved.item() == pytest.approx(base.item(), abs=1e-12)


def test_quality_target_threshold_rules():
    errs = torch.tensor([0.0, 1.0, 1.0 + 1e-9, 2.5], dtype=torch.float64)
    out = quality_target_for(errs, threshold_m=1.0)
    assert out.tolist() == [1.0, 1.0, 0.0, 0.0]
    batch = torch.rand(100) * 3
    want = (batch <= 1.5).float()
    assert torch.equal(quality_target_for(batch, 1.5), want)
    with pytest.raises(ValueError):
        quality_target_for(errs, 0.0)


def test_per_sample_ade_matches_manual():
    pred = torch.tensor([[[3.0, 4.0], [0.0, 0.0]]])
    target = torch.zeros(1, 2, 2)
    assert per_sample_ade(pred, target)[0].item() == pytest.approx(2.5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 3.0))
def test_loss_nonnegative(seed, lam):
    rng = np.random.default_rng(seed)
    terms = compute_loss(
        torch.from_numpy(rng.normal(size=(2, 4, 2))),
        torch.from_numpy(rng.normal(size=(2, 4, 2))),
        torch.from_numpy(rng.uniform(0, 1, size=2)),
        torch.from_numpy(rng.integers(0, 2, size=2).astype(float)),
        lam,
    )
    assert terms.total.item() >= 0.0
    assert terms.plan.item() >= 0.0
    assert terms.quality.item() >= 0.0
