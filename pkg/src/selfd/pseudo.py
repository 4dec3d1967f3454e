"""Hypothetical-input pseudo-labeling of unlabeled frames.

For each unlabeled image the teacher planner is queried with sampled
(speed, command) pairs; its predicted plans and quality estimates become the
pseudo-labeled dataset. Sampling is either UNIFORM (uniform speed range,
stratified commands) or PRIOR (command weights plus the empirical speed
histogram of the labeled data). Everything is reproducible from the teacher
checkpoint, the strategy, and a master seed: frame i always uses the rng
stream keyed (master_seed, i).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .core.manifest import (
    DatasetManifest,
    ManifestRecord,
    load_image,
    pseudo_record,
    read_manifest,
    write_manifest,
)
from .core.types import COMMANDS, Command, PseudoLabeledSample, SamplingKind, WaypointPlan
from .planner.checkpoint import model_fingerprint
from .planner.model import WaypointPlanner

# Frames per teacher inference batch during dataset construction. Verification
# regenerates with the same value, so keep it stable.
FRAME_BLOCK = 24


@dataclass(frozen=True)
class SpeedHistogram:
    """Piecewise-constant speed distribution with inverse-CDF sampling."""

    edges: Tuple[float, ...]  # len = bins + 1, ascending
    probs: Tuple[float, ...]  # len = bins, sums to 1

    def __post_init__(self):
        if len(self.edges) != len(self.probs) + 1 or len(self.probs) == 0:
            raise ValueError("histogram needs len(edges) == len(probs) + 1 >= 2")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("histogram probabilities must sum to 1")

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        cum[-1] = 1.0
        u = rng.random(n)
        idx = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(self.probs) - 1)
        lo = np.asarray(self.edges)[idx]
        hi = np.asarray(self.edges)[idx + 1]
        width = np.where(cum[idx + 1] > cum[idx], cum[idx + 1] - cum[idx], 1.0)
        frac = (u - cum[idx]) / width
        return lo + frac * (hi - lo)

    @classmethod
    def from_speeds(cls, speeds: Sequence[float], bins: int = 20) -> "SpeedHistogram":
        speeds = np.asarray(list(speeds), dtype=np.float64)
        if speeds.size == 0:
            raise ValueError("empty speed histogram: no labeled speeds available")
        lo, hi = float(speeds.min()), float(speeds.max())
        if hi <= lo:
            hi = lo + 1e-6
        counts, edges = np.histogram(speeds, bins=bins, range=(lo, hi))
        probs = counts / counts.sum()
        return cls(edges=tuple(float(e) for e in edges), probs=tuple(float(p) for p in probs))


@dataclass(frozen=True)
class SamplingStrategy:
    kind: SamplingKind = SamplingKind.UNIFORM
    speed_range: Tuple[float, float] = (0.0, 12.0)
    command_weights: Optional[Tuple[float, float, float]] = None  # PRIOR only
    samples_per_frame: int = 6
    speed_prior: Optional[SpeedHistogram] = None  # PRIOR only

    def __post_init__(self):
        lo, hi = self.speed_range
        if lo < 0 or hi <= lo:
            raise ValueError(f"invalid speed range {self.speed_range}")
        if self.samples_per_frame < 0:
            raise ValueError("samples_per_frame must be >= 0")
        if self.kind == SamplingKind.PRIOR:
            if self.command_weights is None:
                raise ValueError("PRIOR strategy needs command_weights")
            w = np.asarray(self.command_weights, dtype=np.float64)
            if len(w) != 3 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"command_weights must be a 3-simplex, got {self.command_weights}")

    def tag(self) -> str:
        return self.kind.name.lower()


def sample_inputs(
    strategy: SamplingStrategy, rng: np.random.Generator
) -> Tuple[float, Command]:
    """Draw one hypothetical (speed, command) pair."""
    if strategy.kind == SamplingKind.UNIFORM:
        v = float(rng.uniform(*strategy.speed_range))
        c = COMMANDS[rng.integers(3)]
        return v, c
    if strategy.speed_prior is None:
        raise ValueError("empty speed histogram: PRIOR strategy needs speed_prior")
    c = COMMANDS[rng.choice(3, p=np.asarray(strategy.command_weights))]
    v = float(strategy.speed_prior.sample(rng, 1)[0])
    return v, c


def _frame_inputs(
    strategy: SamplingStrategy, rng: np.random.Generator
) -> List[Tuple[float, Command]]:
    """The per-frame draw list; UNIFORM stratifies commands across the frame."""
    n = strategy.samples_per_frame
    if n == 0:
        return []
    if strategy.kind == SamplingKind.PRIOR:
        return [sample_inputs(strategy, rng) for _ in range(n)]
    base = n // 3
    commands = [c for c in COMMANDS for _ in range(base)]
    for _ in range(n - 3 * base):
        commands.append(COMMANDS[rng.integers(3)])
    speeds = rng.uniform(*strategy.speed_range, size=n)
    return [(float(v), c) for v, c in zip(speeds, commands)]


def _teacher_forward(
    teacher: WaypointPlanner,
    images: torch.Tensor,
    speeds: Sequence[float],
    commands: Sequence[Command],
) -> Tuple[np.ndarray, np.ndarray]:
    was_training = teacher.training
    teacher.eval()
    try:
        with torch.no_grad():
            wps, sigma = teacher(
                images,
                torch.tensor([float(v) for v in speeds], dtype=images.dtype),
                torch.tensor([int(c) for c in commands]),
            )
    finally:
        if was_training:
            teacher.train()
    return wps.cpu().numpy(), sigma.cpu().numpy()


def what_if_labels(
    teacher: WaypointPlanner,
    image: np.ndarray,
    strategy: SamplingStrategy,
    rng: np.random.Generator,
    image_path: str = "",
    episode_id: str = "",
    frame_index: int = 0,
    teacher_id: Optional[str] = None,
) -> List[PseudoLabeledSample]:
    """Pseudo-label one frame with ``samples_per_frame`` hypothetical queries."""
    draws = _frame_inputs(strategy, rng)
    if not draws:
        return []
    if teacher_id is None:
        teacher_id = model_fingerprint(teacher)
    dtype = next(teacher.parameters()).dtype
    img = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).to(dtype)
    images = img.unsqueeze(0).expand(len(draws), -1, -1, -1).contiguous()
    wps, sigma = _teacher_forward(
        teacher, images, [v for v, _ in draws], [c for _, c in draws]
    )
    out = []
    for i, (v, c) in enumerate(draws):
        out.append(
            PseudoLabeledSample(
                image_path=image_path,
                sampled_speed=v,
                sampled_command=c,
                pseudo_plan=WaypointPlan(wps[i].astype(np.float64), float(sigma[i])),
                teacher_id=teacher_id,
                sampling_strategy=strategy.kind,
                episode_id=episode_id,
                frame_index=frame_index,
            )
        )
    return out


def filter_by_quality(records: Sequence, sigma_min: float):
    """Partition records into (kept, dropped) by quality >= sigma_min.

    Order-preserving and pure: kept + dropped is the input, nothing mutated.
    Works on PseudoLabeledSample or ManifestRecord collections.
    """
    if not (0.0 <= sigma_min <= 1.0):
        raise ValueError(f"sigma_min must be in [0, 1], got {sigma_min}")
    kept, dropped = [], []
    for r in records:
        q = r.pseudo_plan.quality if isinstance(r, PseudoLabeledSample) else r.quality
        (kept if q >= sigma_min else dropped).append(r)
    return kept, dropped


def _generate_records(
    unlabeled: DatasetManifest,
    teacher: WaypointPlanner,
    strategy: SamplingStrategy,
    sigma_min: float,
    master_seed: int,
    frame_indices: Optional[Sequence[int]] = None,
) -> List[ManifestRecord]:
    """Deterministic pseudo-record stream; teacher runs on frame blocks."""
    teacher_id = model_fingerprint(teacher)
    dtype = next(teacher.parameters()).dtype
    indices = list(range(len(unlabeled.records))) if frame_indices is None else list(frame_indices)
    records: List[ManifestRecord] = []
    for start in range(0, len(indices), FRAME_BLOCK):
        block = indices[start : start + FRAME_BLOCK]
        draws_per_frame = []
        images = []
        for i in block:
            rec = unlabeled.records[i]
            rng = np.random.default_rng([master_seed, i])
            draws_per_frame.append(_frame_inputs(strategy, rng))
            img = load_image(unlabeled.image_path(rec))
            images.append(torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))))
        expanded = []
        speeds: List[float] = []
        commands: List[Command] = []
        for img, draws in zip(images, draws_per_frame):
            for v, c in draws:
                expanded.append(img)
                speeds.append(v)
                commands.append(c)
        if not expanded:
            continue
        batch = torch.stack(expanded).to(dtype)
        wps, sigma = _teacher_forward(teacher, batch, speeds, commands)
        pos = 0
        for i, draws in zip(block, draws_per_frame):
            rec = unlabeled.records[i]
            samples = []
            for v, c in draws:
                samples.append(
                    PseudoLabeledSample(
                        image_path=rec.image,
                        sampled_speed=v,
                        sampled_command=c,
                        pseudo_plan=WaypointPlan(
                            wps[pos].astype(np.float64), float(sigma[pos])
                        ),
                        teacher_id=teacher_id,
                        sampling_strategy=strategy.kind,
                        episode_id=rec.episode_id,
                        frame_index=rec.frame_index,
                    )
                )
                pos += 1
            kept, _ = filter_by_quality(samples, sigma_min)
            records.extend(pseudo_record(s) for s in kept)
    return records


def build_pseudo_dataset(
    unlabeled_manifest: Union[str, Path, DatasetManifest],
    teacher: WaypointPlanner,
    strategy: SamplingStrategy,
    sigma_min: float,
    output_path: Union[str, Path],
    master_seed: int = 0,
) -> DatasetManifest:
    """Pseudo-label every frame of the unlabeled manifest and persist the result.

    The output lands next to the unlabeled manifest's images unless
    ``output_path`` is absolute; image paths are rewritten relative to the
    output manifest's directory.
    """
    unlabeled = (
        unlabeled_manifest
        if isinstance(unlabeled_manifest, DatasetManifest)
        else read_manifest(unlabeled_manifest)
    )
    output_path = Path(output_path)
    records = _generate_records(unlabeled, teacher, strategy, sigma_min, master_seed)
    rel = _relative_image_prefix(unlabeled.root, output_path.parent)
    if rel is not None and rel != Path("."):
        for r in records:
            r.image = str(rel / r.image)
    return write_manifest(records, output_path, split="pseudo", seed=master_seed)


def _relative_image_prefix(image_root: Path, manifest_dir: Path) -> Optional[Path]:
    try:
        return image_root.resolve().relative_to(manifest_dir.resolve())
    except ValueError:
        return Path(os.path.relpath(image_root.resolve(), manifest_dir.resolve()))


def verify_pseudo_dataset(
    pseudo_manifest: Union[str, Path, DatasetManifest],
    teacher: WaypointPlanner,
    unlabeled_manifest: Union[str, Path, DatasetManifest],
    strategy: SamplingStrategy,
    sigma_min: float = 0.0,
    master_seed: int = 0,
) -> bool:
    """Re-run the generation pipeline and compare records field-for-field.

    Serialization round-trips floats exactly, so a match means every stored
    pseudo-plan is bit-identical to the teacher's re-inference.
    """
    stored = (
        pseudo_manifest
        if isinstance(pseudo_manifest, DatasetManifest)
        else read_manifest(pseudo_manifest)
    )
    unlabeled = (
        unlabeled_manifest
        if isinstance(unlabeled_manifest, DatasetManifest)
        else read_manifest(unlabeled_manifest)
    )
    regenerated = _generate_records(unlabeled, teacher, strategy, sigma_min, master_seed)
    if len(regenerated) != len(stored.records):
        return False
    for new, old in zip(regenerated, stored.records):
        if (
            new.speed != old.speed
            or new.command != old.command
            or new.waypoints != old.waypoints
            or new.quality != old.quality
            or new.teacher_id != old.teacher_id
            or new.sampling_strategy != old.sampling_strategy
        ):
            return False
    return True
