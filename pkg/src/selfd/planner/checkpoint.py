"""Versioned checkpoint container for planner models."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional, Tuple, Union

import torch

from .model import PlannerConfig, WaypointPlanner

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointConfigError(CheckpointError):
    """Checkpoint config does not match the expected one."""


def state_fingerprint(state_dict: dict) -> str:
    """Short stable hash of parameter names and bytes; used as a model id."""
    digest = hashlib.sha256()
    for name in sorted(state_dict):
        digest.update(name.encode("utf-8"))
        digest.update(state_dict[name].detach().cpu().numpy().tobytes())
    return digest.hexdigest()[:12]


def model_fingerprint(model: WaypointPlanner) -> str:
    return state_fingerprint(model.state_dict())


def save_checkpoint(
    model: WaypointPlanner,
    path: Union[str, Path],
    train_steps: int = 0,
    meta: Optional[dict] = None,
) -> str:
    """Write a checkpoint and return its fingerprint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    payload = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "variant": model.config.variant,
        "state_dict": state,
        "train_steps": int(train_steps),
        "fingerprint": state_fingerprint(state),
        "meta": meta or {},
    }
    torch.save(payload, path)
    return payload["fingerprint"]


def load_checkpoint(
    path: Union[str, Path],
    expected_config: Optional[PlannerConfig] = None,
) -> Tuple[WaypointPlanner, dict]:
    """Load a checkpoint into a fresh model.

    A mismatch between ``expected_config`` and the stored config is an error,
    never a silent adaptation.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('checkpoint_version')}: {path}"
        )
    config = PlannerConfig.from_dict(payload["config"])
    if expected_config is not None and config != expected_config:
        raise CheckpointConfigError(
            f"checkpoint config does not match the expected config: {path}"
        )
    model = WaypointPlanner(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, {
        "train_steps": payload["train_steps"],
        "fingerprint": payload["fingerprint"],
        "meta": payload.get("meta", {}),
        "variant": payload["variant"],
    }
