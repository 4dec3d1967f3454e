"""Training loss: L1 waypoint regression plus a weighted quality BCE term."""

from __future__ import annotations

from dataclasses import dataclass

import torch

# Predicted quality is clamped to [BCE_EPS, 1 - BCE_EPS] before the logs so a
# saturated sigmoid cannot produce inf; equivalent to clamping the logits.
BCE_EPS = 1e-7


@dataclass
class LossTerms:
    """Total loss with its per-term breakdown (tensors, differentiable)."""

    total: torch.Tensor
    plan: torch.Tensor
    quality: torch.Tensor


def waypoint_l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all waypoints and both coordinates.

    With a (+1, 0) meter offset at every waypoint this evaluates to 0.5:
    the mean of |1| and |0| per coordinate pair.
    """
    return (pred - target).abs().mean()


def quality_bce(pred_quality: torch.Tensor, quality_target: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy on the quality scalar, numerically safe."""
    q = pred_quality.clamp(BCE_EPS, 1.0 - BCE_EPS)
    t = quality_target.to(q.dtype)
    return -(t * q.log() + (1.0 - t) * (1.0 - q).log()).mean()


def compute_loss(
    pred_waypoints: torch.Tensor,
    target_waypoints: torch.Tensor,
    pred_quality: torch.Tensor,
    quality_target: torch.Tensor,
    lambda_quality: float = 0.1,
) -> LossTerms:
    """Combined objective: plan L1 plus lambda-weighted quality BCE."""
    if pred_waypoints.shape != target_waypoints.shape:
        raise ValueError(
            f"waypoint shape mismatch: {tuple(pred_waypoints.shape)} vs "
            f"{tuple(target_waypoints.shape)}"
        )
    if lambda_quality < 0:
        raise ValueError(f"lambda_quality must be >= 0, got {lambda_quality}")
    plan = waypoint_l1(pred_waypoints, target_waypoints)
    quality = quality_bce(pred_quality, quality_target)
    return LossTerms(total=plan + lambda_quality * quality, plan=plan, quality=quality)


def per_sample_ade(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Average L2 displacement per sample for (B, K, 2) waypoint tensors."""
    return (pred - target).norm(dim=-1).mean(dim=-1)


def quality_target_for(error_m: torch.Tensor, threshold_m: float) -> torch.Tensor:
    """Binary quality target: 1 where the plan error is within the threshold.

    The boundary is inclusive: an error exactly equal to the threshold still
    counts as a good plan.
    """
    if threshold_m <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold_m}")
    return (error_m <= threshold_m).to(error_m.dtype)
