"""Analytic vs central finite-difference gradients for the combined loss."""

import dataclasses

import numpy as np
import pytest
import torch

from selfd.core import Command
from selfd.core.types import CameraSpec
from selfd.planner import (
    PlannerConfig,
    VARIANT_IMAGE_PLANE_HOMOGRAPHY,
    VARIANT_MULTI_BRANCH_BEV,
    VARIANT_SINGLE_BRANCH_BEV,
    WaypointPlanner,
    compute_loss,
    per_sample_ade,
    quality_target_for,
)

EPS = 1e-4
TOL = 1e-4


def grad_check_config(variant):
    camera = None
    if variant == VARIANT_IMAGE_PLANE_HOMOGRAPHY:
        camera = dataclasses.asdict(CameraSpec(width=16, height=12))
    return PlannerConfig.from_dict(
        dict(
            input_width=16,
            input_height=12,
            num_waypoints=2,
            encoder_channels=[3, 4],
            encoder_strides=[2, 2],
            fused_channels=2,
            decoder_channels=3,
            heatmap_upsample=1,
            num_branches=3,
            projection_hidden=5,
            dropout=0.0,
            softmax_temperature=1.0,
            speed_norm=12.0,
            quality_hidden=4,
            variant=variant,
            homography_camera=camera,
            max_range_m=60.0,
        )
    )


def loss_value(model, images, speeds, commands, targets, lam):
    wps, q = model(images, speeds, commands)
    with torch.no_grad():
        q_target = quality_target_for(per_sample_ade(wps.detach(), targets), 1.0)
    return compute_loss(wps, targets, q, q_target, lam)


@pytest.mark.parametrize(
    "variant",
    [VARIANT_MULTI_BRANCH_BEV, VARIANT_SINGLE_BRANCH_BEV, VARIANT_IMAGE_PLANE_HOMOGRAPHY],
)
@pytest.mark.parametrize("term", ["total", "plan", "quality"])
def test_analytic_gradients_match_finite_differences(variant, term):
    torch.manual_seed(11)
    cfg = grad_check_config(variant)
    model = WaypointPlanner(cfg).double()
    model.eval()  # no dropout; loss must be deterministic for FD

    rng = np.random.default_rng(11)
    images = torch.from_numpy(rng.random((3, 3, cfg.input_height, cfg.input_width)))
    speeds = torch.tensor([2.0, 5.0, 8.0], dtype=torch.float64)
    commands = torch.tensor([1, 2, 3])
    targets = torch.from_numpy(rng.normal(scale=3.0, size=(3, cfg.num_waypoints, 2)))
    lam = 0.3

    def scalar_loss():
        terms = loss_value(model, images, speeds, commands, targets, lam)
        return getattr(terms, term)

    model.zero_grad()
    scalar_loss().backward()

    checked = 0
    for name, p in model.named_parameters():
        if p.grad is None:
            continue
        analytic = p.grad.detach().clone().reshape(-1)
        flat = p.detach().reshape(-1)
        n = flat.numel()
        idxs = range(n) if n <= 24 else rng.choice(n, size=24, replace=False)
        fd = []
        an = []
        for i in idxs:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + EPS
            up = scalar_loss().item()
            with torch.no_grad():
                flat[i] = orig - EPS
            down = scalar_loss().item()
            with torch.no_grad():
                flat[i] = orig
            fd.append((up - down) / (2 * EPS))
            an.append(analytic[i].item())
        fd = np.asarray(fd)
        an = np.asarray(an)
        denom = max(np.linalg.norm(an), 1e-8)
        rel = np.linalg.norm(fd - an) / denom
        assert rel <= TOL, f"{variant} {term} {name}: rel err {rel:.2e}"
        checked += 1
    assert checked > 0
