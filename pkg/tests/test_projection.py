import math

import numpy as np
import pytest
import torch

from selfd.core import Command
from selfd.core.types import CameraSpec
from selfd.planner import GroundPlaneProjection, ProjectionStack, project_to_bev
from selfd.sim import camera_grid


def test_identity_final_layer_with_zeroed_earlier_layers_returns_bias():
    stack = ProjectionStack(num_waypoints=4, hidden=16, dropout=0.0)
    with torch.no_grad():
        for layer in (stack.layers[0], stack.layers[3]):
            layer.weight.zero_()
            layer.bias.zero_()
        stack.layers[6].weight.zero_()
        stack.layers[6].bias.copy_(torch.arange(8, dtype=torch.float32))
    stack.eval()
    for _ in range(3):
        pts = torch.rand(2, 4, 2)
        out = stack(pts)
        assert torch.allclose(out, torch.arange(8, dtype=torch.float32).reshape(4, 2))


def oracle_stack(points_flat, params):
    """Straightforward affine+ReLU composition in plain numpy."""
    x = points_flat
    w0, b0, w1, b1, w2, b2 = params
    x = np.maximum(w0 @ x + b0, 0.0)
    x = np.maximum(w1 @ x + b1, 0.0)
    return w2 @ x + b2


def test_random_stack_matches_recomputation_oracle():
    torch.manual_seed(1)
    stack = ProjectionStack(num_waypoints=3, hidden=10, dropout=0.0).double()
    stack.eval()
    params = [
        stack.layers[0].weight.detach().numpy(),
        stack.layers[0].bias.detach().numpy(),
        stack.layers[3].weight.detach().numpy(),
        stack.layers[3].bias.detach().numpy(),
        stack.layers[6].weight.detach().numpy(),
        stack.layers[6].bias.detach().numpy(),
    ]
    rng = np.random.default_rng(4)
    for _ in range(200):
        pts = rng.random((3, 2))
        expected = oracle_stack(pts.reshape(-1), params).reshape(3, 2)
        out = stack(torch.from_numpy(pts).unsqueeze(0))[0].detach().numpy()
        assert np.allclose(out, expected, atol=1e-12)


def test_command_selects_distinct_stack():
    torch.manual_seed(2)
    stacks = [ProjectionStack(3, 8, 0.0).eval() for _ in range(3)]
    pts = torch.rand(1, 3, 2)
    outs = [project_to_bev(pts, cmd, stacks) for cmd in (Command.LEFT, Command.FORWARD, Command.RIGHT)]
    assert not torch.allclose(outs[0], outs[1])
    assert torch.allclose(outs[1], project_to_bev(pts, Command.FORWARD, stacks))
    shared = stacks[0]
    assert torch.allclose(
        project_to_bev(pts, Command.LEFT, shared), project_to_bev(pts, Command.RIGHT, shared)
    )


def test_ground_projection_agrees_with_renderer_geometry():
    cam = CameraSpec(height_m=1.6, pitch_deg=5.0, fov_deg=70.0, width=64, height=36)
    proj = GroundPlaneProjection(cam, max_range_m=500.0)
    row0, fwd, left, _ = camera_grid(cam, max_depth=500.0)
    rng = np.random.default_rng(5)
    for _ in range(50):
        r = int(rng.integers(row0 + 2, cam.height))
        c = int(rng.integers(0, cam.width))
        pt = torch.tensor([[[(c + 0.5) / cam.width, (r + 0.5) / cam.height]]], dtype=torch.float64)
        out = proj(pt)[0, 0].numpy()
        assert out[0] == pytest.approx(fwd[r - row0, c], abs=1e-9)
        assert out[1] == pytest.approx(left[r - row0, c], abs=1e-9)


def test_ground_projection_clamps_above_horizon():
    cam = CameraSpec(height_m=1.5, pitch_deg=0.0, fov_deg=70.0, width=64, height=36)
    proj = GroundPlaneProjection(cam, max_range_m=60.0)
    pts = torch.tensor([[[0.5, 0.0], [0.5, 0.5], [0.5, 0.999]]], dtype=torch.float64)
    out = proj(pts)[0]
    dists = torch.linalg.norm(out, dim=-1)
    assert torch.all(torch.isfinite(out))
    assert dists.max() <= 60.0 * 1.05  # forward component capped by the clamp
    assert dists[2] < 6.0  # near-bottom pixel is close ground
