"""Conditional monocular-to-BEV waypoint network.

Shared trunk for all architecture variants: conv encoder -> concat normalized
speed -> fused feature map -> per-command deconvolution decoder producing K
waypoint heatmaps -> spatial softmax -> K points in the normalized image
frame. The variants differ in how those points become BEV meters:

* IMAGE_PLANE_HOMOGRAPHY: fixed ground-plane projection from a known camera
  (ablation baseline; exact when the camera matches, mis-calibrated otherwise).
* SINGLE_BRANCH_BEV: one learned 3-layer projection stack shared by all
  commands.
* MULTI_BRANCH_BEV: one learned projection stack per command (the default).

A small quality head predicts a scalar confidence in [0, 1] from the fused
features and the command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from ..core.types import COMMANDS, CameraSpec, Command, Observation, WaypointPlan

VARIANT_IMAGE_PLANE_HOMOGRAPHY = "IMAGE_PLANE_HOMOGRAPHY"
VARIANT_SINGLE_BRANCH_BEV = "SINGLE_BRANCH_BEV"
VARIANT_MULTI_BRANCH_BEV = "MULTI_BRANCH_BEV"
VARIANTS = (
    VARIANT_IMAGE_PLANE_HOMOGRAPHY,
    VARIANT_SINGLE_BRANCH_BEV,
    VARIANT_MULTI_BRANCH_BEV,
)

_cpu_math_configured = False


def _configure_cpu_math() -> None:
    """Flush denormal floats on CPU.

    Sharpening heatmaps push softmax tails into the denormal range, where x86
    falls back to microcode and training slows by an order of magnitude;
    flushing them to zero has no measurable effect on results here.
    """
    global _cpu_math_configured
    if not _cpu_math_configured:
        torch.set_flush_denormal(True)
        _cpu_math_configured = True


class PlannerError(Exception):
    pass


class ResolutionMismatchError(PlannerError):
    """Input image does not match the configured resolution."""


class NonFiniteActivationError(PlannerError):
    """Forward pass produced NaN/inf; reported as a training fault."""


@dataclass
class PlannerConfig:
    input_width: int = 128
    input_height: int = 72
    num_waypoints: int = 5
    encoder_channels: Tuple[int, ...] = (12, 24, 48, 48)
    encoder_strides: Tuple[int, ...] = (2, 2, 2, 2)
    fused_channels: int = 8
    decoder_channels: int = 16
    heatmap_upsample: int = 1  # power of two; 1 keeps encoder geometry
    num_branches: int = 3
    projection_hidden: int = 64
    projection_scale: float = 20.0  # meters of BEV output per unit of raw MLP output
    projection_prior_init: bool = True  # start stacks at a rough perspective prior
    dropout: float = 0.1
    softmax_temperature: float = 1.0
    speed_norm: float = 12.0  # m/s mapped to 1.0 at the network input
    quality_hidden: int = 64
    variant: str = VARIANT_MULTI_BRANCH_BEV
    homography_camera: Optional[CameraSpec] = None
    max_range_m: float = 60.0  # ground projection clamp for the homography head

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.num_branches != len(COMMANDS):
            raise ValueError("num_branches must equal the number of commands")
        up = self.heatmap_upsample
        if up < 1 or (up & (up - 1)) != 0:
            raise ValueError("heatmap_upsample must be a power of two >= 1")
        if self.variant == VARIANT_IMAGE_PLANE_HOMOGRAPHY and self.homography_camera is None:
            raise ValueError("IMAGE_PLANE_HOMOGRAPHY requires homography_camera")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["encoder_channels"] = list(self.encoder_channels)
        data["encoder_strides"] = list(self.encoder_strides)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerConfig":
        data = dict(data)
        if data.get("homography_camera") is not None:
            data["homography_camera"] = CameraSpec(**data["homography_camera"])
        data["encoder_channels"] = tuple(data["encoder_channels"])
        data["encoder_strides"] = tuple(data["encoder_strides"])
        return cls(**data)


def spatial_softmax(scores: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Softmax-weighted expected coordinate of a score map.

    ``scores`` has shape (..., H, W); the result has shape (..., 2) holding
    (u, v) in the normalized image frame: u along width, v along height,
    measured at pixel centers, so outputs are strictly inside (0, 1).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if not torch.isfinite(scores).all():
        raise NonFiniteActivationError("spatial_softmax received non-finite scores")
    h, w = scores.shape[-2], scores.shape[-1]
    flat = (scores / temperature).flatten(start_dim=-2)
    probs = torch.softmax(flat, dim=-1).reshape(scores.shape)
    dtype, dev = scores.dtype, scores.device
    us = (torch.arange(w, dtype=dtype, device=dev) + 0.5) / w
    vs = (torch.arange(h, dtype=dtype, device=dev) + 0.5) / h
    u = (probs.sum(dim=-2) * us).sum(dim=-1)
    v = (probs.sum(dim=-1) * vs).sum(dim=-1)
    return torch.stack([u, v], dim=-1)


# Rough perspective prior used to initialize learned projection stacks:
# meters of forward range per unit of image row, meters of leftward range per
# unit of image column, and the forward offset at the image center. Crude on
# purpose; it only has to orient early gradients.
PRIOR_FWD_GAIN = 45.0
PRIOR_LAT_GAIN = 18.0
PRIOR_FWD_OFFSET = 8.0
PRIOR_NOISE = 0.02


class ProjectionStack(nn.Module):
    """3-layer learned mapping from K normalized image points to K BEV points.

    First two layers carry ReLU and Dropout; the last is affine. Operates on
    the flattened (u1, v1, ..., uK, vK) vector. ``output_scale`` converts the
    O(1) network output into meters so the optimizer covers the BEV range in
    a reasonable number of steps.

    With ``prior_init`` the stack starts as an exact affine map embedding a
    rough image-to-ground perspective prior (points lower in the image are
    nearer, points left of center are leftward). Random initialization leaves
    the waypoint heads stuck in a vision-free local optimum at small training
    scales; the prior breaks that degeneracy without fixing any geometry.
    """

    def __init__(
        self,
        num_waypoints: int,
        hidden: int,
        dropout: float,
        output_scale: float = 1.0,
        prior_init: bool = False,
    ):
        super().__init__()
        dim = 2 * num_waypoints
        if prior_init and hidden < 2 * dim:
            raise ValueError(f"prior init needs hidden >= {2 * dim}, got {hidden}")
        self.output_scale = float(output_scale)
        self.layers = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
        )
        if prior_init:
            self._apply_prior_init(num_waypoints)

    def _apply_prior_init(self, k: int) -> None:
        """Embed out = A @ (x - 0.5) + b exactly through the two ReLUs.

        Layer 1 splits each input into positive/negative parts, layer 2
        passes them through, layer 3 recombines with the prior coefficients.
        Small noise elsewhere keeps unused hidden units trainable.
        """
        dim = 2 * k
        A = torch.zeros(dim, dim)
        b_out = torch.zeros(dim)
        for i in range(k):
            A[2 * i, 2 * i + 1] = -PRIOR_FWD_GAIN  # larger v (lower row) = nearer
            A[2 * i + 1, 2 * i] = -PRIOR_LAT_GAIN  # smaller u (left) = leftward
            b_out[2 * i] = PRIOR_FWD_OFFSET
        with torch.no_grad():
            for lin in (self.layers[0], self.layers[3], self.layers[6]):
                lin.weight.normal_(0, PRIOR_NOISE)
                lin.bias.zero_()
            w1, b1 = self.layers[0].weight, self.layers[0].bias
            for i in range(dim):
                w1[2 * i, i] += 1.0
                w1[2 * i + 1, i] += -1.0
                b1[2 * i] += -0.5
                b1[2 * i + 1] += 0.5
            w2 = self.layers[3].weight
            for i in range(2 * dim):
                w2[i, i] += 1.0
            w3, b3 = self.layers[6].weight, self.layers[6].bias
            for j in range(dim):
                for i in range(dim):
                    w3[j, 2 * i] += A[j, i] / self.output_scale
                    w3[j, 2 * i + 1] += -A[j, i] / self.output_scale
                b3[j] += b_out[j] / self.output_scale

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        b, k, _ = points.shape
        out = self.layers(points.reshape(b, 2 * k)).reshape(b, k, 2)
        return out * self.output_scale


class GroundPlaneProjection(nn.Module):
    """Parameter-free pinhole ground-plane projection for a fixed camera.

    Maps normalized image points to BEV meters assuming a flat ground and the
    given camera spec. Rays at or above the horizon are clamped so the
    projected distance never exceeds ``max_range_m``.
    """

    def __init__(self, camera: CameraSpec, max_range_m: float = 60.0):
        super().__init__()
        self.camera = camera
        self.max_range_m = float(max_range_m)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        cam = self.camera
        f = cam.focal_px
        phi = math.radians(cam.pitch_deg)
        u_px = points[..., 0] * cam.width
        v_px = points[..., 1] * cam.height
        rx = (u_px - cam.width / 2.0) / f
        ry = (v_px - cam.height / 2.0) / f
        # Ray direction in the ego frame (x fwd, y left, z up); camera looks
        # along +x pitched down by phi.
        e_fwd = math.cos(phi) - ry * math.sin(phi)
        e_left = -rx
        down = ry * math.cos(phi) + math.sin(phi)
        denom = torch.clamp(down, min=cam.height_m / self.max_range_m)
        t = cam.height_m / denom
        return torch.stack([t * e_fwd, t * e_left], dim=-1)


def project_to_bev(points: torch.Tensor, command: Command, stacks) -> torch.Tensor:
    """Apply the command-selected projection to normalized image points.

    ``stacks`` is either a sequence of per-command modules (selected by the
    command's index) or a single shared module.
    """
    if isinstance(stacks, (list, tuple, nn.ModuleList)):
        module = stacks[int(command) - 1]
    else:
        module = stacks
    return module(points)


def _encoder(config: PlannerConfig) -> nn.Sequential:
    layers = []
    c_in = 3
    for c_out, stride in zip(config.encoder_channels, config.encoder_strides):
        layers += [nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1), nn.ReLU()]
        c_in = c_out
    return nn.Sequential(*layers)


def _heatmap_decoder(config: PlannerConfig) -> nn.Sequential:
    c = config.decoder_channels
    layers = [
        nn.ConvTranspose2d(config.fused_channels, c, 3, stride=1, padding=1),
        nn.ReLU(),
    ]
    up = config.heatmap_upsample
    while up > 1:
        layers += [nn.ConvTranspose2d(c, c, 4, stride=2, padding=1), nn.ReLU()]
        up //= 2
    layers.append(nn.Conv2d(c, config.num_waypoints, 3, stride=1, padding=1))
    return nn.Sequential(*layers)


class WaypointPlanner(nn.Module):
    """Conditional observations-to-BEV waypoint policy with a quality head."""

    def __init__(self, config: PlannerConfig):
        super().__init__()
        _configure_cpu_math()
        self.config = config
        self.encoder = _encoder(config)
        with torch.no_grad():
            dummy = torch.zeros(1, 3, config.input_height, config.input_width)
            enc_out = self.encoder(dummy)
        self.enc_shape = tuple(enc_out.shape[1:])  # (C, h, w)
        flat = int(np.prod(self.enc_shape))
        c, h, w = self.enc_shape
        self.fused_dim = config.fused_channels * h * w
        self.fuse = nn.Linear(flat + 1, self.fused_dim)
        self.heatmap_decoders = nn.ModuleList(
            _heatmap_decoder(config) for _ in range(config.num_branches)
        )
        if config.variant == VARIANT_MULTI_BRANCH_BEV:
            self.projections = nn.ModuleList(
                ProjectionStack(
                    config.num_waypoints,
                    config.projection_hidden,
                    config.dropout,
                    config.projection_scale,
                    config.projection_prior_init,
                )
                for _ in range(config.num_branches)
            )
        elif config.variant == VARIANT_SINGLE_BRANCH_BEV:
            self.projections = ProjectionStack(
                config.num_waypoints,
                config.projection_hidden,
                config.dropout,
                config.projection_scale,
                config.projection_prior_init,
            )
        else:
            self.projections = GroundPlaneProjection(
                config.homography_camera, config.max_range_m
            )
        self.quality_head = nn.Sequential(
            nn.Linear(self.fused_dim + config.num_branches, config.quality_hidden),
            nn.ReLU(),
            nn.Linear(config.quality_hidden, 1),
        )

    @property
    def heatmap_shape(self) -> Tuple[int, int]:
        _, h, w = self.enc_shape
        return h * self.config.heatmap_upsample, w * self.config.heatmap_upsample

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(
        self, images: torch.Tensor, speeds: torch.Tensor, commands: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Batched forward pass.

        images: (B, 3, H, W) in [0, 1]; speeds: (B,) m/s; commands: (B,) int
        codes in {1, 2, 3}. Returns (waypoints (B, K, 2) BEV meters,
        quality (B,) in (0, 1)). Each sample is routed through the decoder
        (and, for the multi-branch variant, the projection stack) of its own
        command only, so the output never depends on other branches'
        parameters.
        """
        cfg = self.config
        if images.shape[-2:] != (cfg.input_height, cfg.input_width):
            raise ResolutionMismatchError(
                f"expected {cfg.input_height}x{cfg.input_width} input, got "
                f"{images.shape[-2]}x{images.shape[-1]}"
            )
        b = images.shape[0]
        z = self.encoder(images).flatten(1)
        fused = torch.relu(
            self.fuse(torch.cat([z, (speeds / cfg.speed_norm).unsqueeze(1)], dim=1))
        )
        c, h, w = self.enc_shape
        fmap = fused.reshape(b, cfg.fused_channels, h, w)

        waypoints = fused.new_zeros(b, cfg.num_waypoints, 2)
        for idx, cmd in enumerate(COMMANDS):
            mask = commands == int(cmd)
            if not torch.any(mask):
                continue
            heatmaps = self.heatmap_decoders[idx](fmap[mask])
            pts = spatial_softmax(heatmaps, cfg.softmax_temperature)
            if cfg.variant == VARIANT_MULTI_BRANCH_BEV:
                bev = self.projections[idx](pts)
            else:
                bev = self.projections(pts)
            waypoints = waypoints.index_put((torch.nonzero(mask).squeeze(1),), bev)

        onehot = torch.nn.functional.one_hot(
            commands.long() - 1, num_classes=cfg.num_branches
        ).to(fused.dtype)
        quality = torch.sigmoid(
            self.quality_head(torch.cat([fused, onehot], dim=1)).squeeze(1)
        )
        if not (torch.isfinite(waypoints).all() and torch.isfinite(quality).all()):
            raise NonFiniteActivationError("planner produced non-finite outputs")
        return waypoints, quality

    @torch.no_grad()
    def plan(self, obs: Observation) -> WaypointPlan:
        """Single-observation inference; deterministic in eval mode."""
        was_training = self.training
        self.eval()
        try:
            dtype = next(self.parameters()).dtype
            img = torch.from_numpy(np.ascontiguousarray(obs.image.transpose(2, 0, 1)))
            img = img.to(dtype).unsqueeze(0)
            speeds = torch.tensor([obs.speed], dtype=dtype)
            commands = torch.tensor([int(obs.command)])
            wps, quality = self.forward(img, speeds, commands)
        finally:
            if was_training:
                self.train()
        return WaypointPlan(wps[0].cpu().numpy().astype(np.float64), float(quality[0]))

    def branch_parameters(self, command: Command):
        """Parameters belonging exclusively to the given command's branch."""
        idx = int(command) - 1
        yield from self.heatmap_decoders[idx].parameters()
        if self.config.variant == VARIANT_MULTI_BRANCH_BEV:
            yield from self.projections[idx].parameters()
