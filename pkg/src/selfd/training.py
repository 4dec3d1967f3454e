"""Mini-batch training, open-loop evaluation, and the staged self-training run.

The staged schedule is: (1) train a teacher on the labeled set, (2) build a
pseudo-labeled set from the unlabeled pool with hypothetical-input sampling,
(3) train a student from scratch on the pseudo-labels and fine-tune it on the
labeled set. Stages never mix datasets: each stage trains on exactly one
manifest and the history records that manifest's fingerprint, so there are no
labeled/pseudo mixing ratios anywhere.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from .core.manifest import DatasetManifest, load_image_u8, read_manifest
from .core.types import Command
from .metrics import MetricsReport, collision_rate, displacement_errors
from .planner.checkpoint import load_checkpoint, model_fingerprint, save_checkpoint
from .planner.losses import compute_loss, per_sample_ade, quality_target_for
from .planner.model import PlannerConfig, WaypointPlanner
from .pseudo import SamplingStrategy, build_pseudo_dataset


class TrainingFault(Exception):
    """Non-finite loss or another unrecoverable optimization failure."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    lambda_quality: float = 0.1
    quality_threshold: float = 1.0  # meters of ADE considered a good plan
    seed: int = 0
    input_width: int = 128
    input_height: int = 72
    checkpoint_every: int = 0  # epochs; 0 saves only at the stage end
    eval_every: int = 0  # epochs between eval rows; 0 disables

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("hyperparameters must be positive")
        if self.lambda_quality < 0 or self.quality_threshold <= 0:
            raise ValueError("lambda_quality must be >= 0 and quality_threshold > 0")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        """Full-scale settings: batch 96 for 128 epochs at 400x225, lr 1e-3."""
        base = dict(
            learning_rate=1e-3, batch_size=96, epochs=128, input_width=400, input_height=225
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class EpochStats:
    epoch: int
    loss_total: float
    loss_plan: float
    loss_quality: float
    wall_clock_s: float
    eval_ade: Optional[float] = None
    eval_fde: Optional[float] = None


@dataclass
class TrainHistory:
    stage: str
    seed: int
    dataset_fingerprint: str
    epochs: List[EpochStats] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "stage": self.stage,
                "seed": self.seed,
                "dataset_fingerprint": self.dataset_fingerprint,
                "epochs": [asdict(e) for e in self.epochs],
            },
            indent=2,
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "TrainHistory":
        data = json.loads(text)
        hist = cls(data["stage"], data["seed"], data["dataset_fingerprint"])
        hist.epochs = [EpochStats(**e) for e in data["epochs"]]
        return hist


class PlanDataset:
    """In-memory batch source over a manifest with targets.

    Images are cached as uint8 and deduplicated by path, which matters for
    pseudo-labeled sets where many records share a frame.
    """

    def __init__(self, manifest: DatasetManifest, expected_kind: Optional[str] = None):
        records = [r for r in manifest.records if r.kind != "unlabeled"]
        if not records:
            raise ValueError(f"manifest {manifest.path} has no trainable records")
        if expected_kind is not None:
            kinds = {r.kind for r in records}
            if kinds != {expected_kind}:
                raise ValueError(
                    f"expected only {expected_kind!r} records, found kinds {sorted(kinds)}"
                )
        self.manifest = manifest
        self.records = records
        root = manifest.root
        cache: Dict[str, np.ndarray] = {}
        for r in records:
            if r.image not in cache:
                cache[r.image] = load_image_u8(root / r.image)
        self._images = cache
        self.speeds = np.array([r.speed for r in records], dtype=np.float32)
        self.commands = np.array([r.command for r in records], dtype=np.int64)
        self.targets = np.array([r.waypoints for r in records], dtype=np.float32)
        self.fingerprint = manifest.fingerprint()

    def __len__(self) -> int:
        return len(self.records)

    def batch(self, indices: np.ndarray) -> Tuple[torch.Tensor, ...]:
        imgs = np.stack([self._images[self.records[i].image] for i in indices])
        images = torch.from_numpy(imgs).to(torch.float32).div_(255.0).permute(0, 3, 1, 2)
        return (
            images.contiguous(),
            torch.from_numpy(self.speeds[indices]),
            torch.from_numpy(self.commands[indices]),
            torch.from_numpy(self.targets[indices]),
        )


def _check_resolution(model: WaypointPlanner, config: TrainConfig) -> None:
    if (model.config.input_width, model.config.input_height) != (
        config.input_width,
        config.input_height,
    ):
        raise ValueError(
            "train config resolution "
            f"{config.input_width}x{config.input_height} does not match planner "
            f"{model.config.input_width}x{model.config.input_height}"
        )


def train(
    model: WaypointPlanner,
    dataset: Union[DatasetManifest, str, Path],
    config: TrainConfig,
    stage: str = "train",
    eval_manifest: Optional[DatasetManifest] = None,
    expected_kind: Optional[str] = None,
) -> Tuple[WaypointPlanner, TrainHistory]:
    """Minimize the combined loss with Adam over mini-batches.

    Fixed seeds make runs reproducible on a fixed backend. A non-finite loss
    aborts with the parameters restored to the end of the last good epoch.
    """
    manifest = dataset if isinstance(dataset, DatasetManifest) else read_manifest(dataset)
    _check_resolution(model, config)
    data = PlanDataset(manifest, expected_kind)
    history = TrainHistory(stage=stage, seed=config.seed, dataset_fingerprint=data.fingerprint)

    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
    model.train()
    start = time.time()

    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch, 0xBA7C4]).permutation(len(data))
        sums = np.zeros(3)
        batches = 0
        for lo in range(0, len(data), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            images, speeds, commands, targets = data.batch(idx)
            pred_wps, pred_q = model(images, speeds, commands)
            with torch.no_grad():
                q_target = quality_target_for(
                    per_sample_ade(pred_wps.detach(), targets), config.quality_threshold
                )
            terms = compute_loss(pred_wps, targets, pred_q, q_target, config.lambda_quality)
            if not torch.isfinite(terms.total):
                model.load_state_dict(last_good)
                raise TrainingFault(
                    f"non-finite loss in stage {stage!r} epoch {epoch}; "
                    "parameters restored to the last completed epoch"
                )
            optimizer.zero_grad()
            terms.total.backward()
            optimizer.step()
            sums += [terms.total.item(), terms.plan.item(), terms.quality.item()]
            batches += 1
        last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
        stats = EpochStats(
            epoch=epoch,
            loss_total=sums[0] / batches,
            loss_plan=sums[1] / batches,
            loss_quality=sums[2] / batches,
            wall_clock_s=time.time() - start,
        )
        if eval_manifest is not None and config.eval_every and (epoch + 1) % config.eval_every == 0:
            report = evaluate_open_loop(model, eval_manifest)
            stats.eval_ade, stats.eval_fde = report.ade, report.fde
            model.train()
        history.epochs.append(stats)
    model.eval()
    return model, history


@torch.no_grad()
def evaluate_open_loop(
    model: WaypointPlanner,
    manifest: Union[DatasetManifest, str, Path],
    batch_size: int = 64,
    ego_halfwidth: float = 1.0,
) -> MetricsReport:
    """ADE/FDE (and collision rate where annotated) on a labeled manifest."""
    manifest = manifest if isinstance(manifest, DatasetManifest) else read_manifest(manifest)
    data = PlanDataset(manifest)
    if len(data) == 0:
        raise ValueError("empty eval set")
    was_training = model.training
    model.eval()
    preds = []
    for lo in range(0, len(data), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(data)))
        images, speeds, commands, _ = data.batch(idx)
        wps, _ = model(images, speeds, commands)
        preds.append(wps.cpu().numpy())
    if was_training:
        model.train()
    preds = np.concatenate(preds, axis=0)
    ade_arr, fde_arr = displacement_errors(preds, data.targets)
    agent_lists = [r.nearby_agents for r in data.records]
    coll = None
    if any(a is not None for a in agent_lists):
        coll = collision_rate(list(preds), agent_lists, ego_halfwidth)
    return MetricsReport(
        ade=float(ade_arr.mean()),
        fde=float(fde_arr.mean()),
        collision_rate=coll,
        count=len(data),
        split=manifest.split,
    )


@dataclass
class SelfTrainResult:
    checkpoints: Dict[str, Path]
    histories: Dict[str, TrainHistory]
    pseudo_manifests: Dict[str, Path]


def _fresh_model(config: PlannerConfig, init_seed: int) -> WaypointPlanner:
    torch.manual_seed(init_seed)
    return WaypointPlanner(config)


def run_selfd(
    labeled_manifest: Union[DatasetManifest, str, Path],
    unlabeled_manifest: Union[DatasetManifest, str, Path],
    planner_config: PlannerConfig,
    config: TrainConfig,
    out_dir: Union[str, Path],
    strategy: SamplingStrategy = SamplingStrategy(),
    sigma_min: float = 0.0,
    iterations: int = 1,
    stage_epochs: Optional[Dict[str, int]] = None,
    eval_manifest: Optional[DatasetManifest] = None,
) -> SelfTrainResult:
    """The staged schedule: teacher, pseudo-label, pre-train, fine-tune.

    ``iterations`` > 1 repeats pseudo-labeling with the latest fine-tuned
    model as the teacher. Emits 3 checkpoints for one iteration and 2 more
    per extra iteration. Each student is re-initialized from scratch.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labeled = (
        labeled_manifest
        if isinstance(labeled_manifest, DatasetManifest)
        else read_manifest(labeled_manifest)
    )
    unlabeled = (
        unlabeled_manifest
        if isinstance(unlabeled_manifest, DatasetManifest)
        else read_manifest(unlabeled_manifest)
    )
    stage_epochs = stage_epochs or {}

    def stage_config(name: str) -> TrainConfig:
        return replace(config, epochs=stage_epochs.get(name, config.epochs))

    checkpoints: Dict[str, Path] = {}
    histories: Dict[str, TrainHistory] = {}
    pseudo_paths: Dict[str, Path] = {}

    teacher = _fresh_model(planner_config, config.seed)
    teacher, hist = train(
        teacher, labeled, stage_config("teacher"), stage="teacher",
        eval_manifest=eval_manifest, expected_kind="labeled",
    )
    ckpt = out_dir / "teacher.pt"
    save_checkpoint(teacher, ckpt, train_steps=len(hist.epochs))
    hist.save(out_dir / "teacher_history.json")
    checkpoints["teacher"] = ckpt
    histories["teacher"] = hist

    current_teacher = teacher
    for it in range(1, iterations + 1):
        pseudo_path = out_dir / f"pseudo_{it}.jsonl"
        pseudo = build_pseudo_dataset(
            unlabeled,
            current_teacher,
            strategy,
            sigma_min,
            pseudo_path,
            master_seed=config.seed * 1000 + it,
        )
        pseudo_paths[f"iteration_{it}"] = pseudo_path

        student = _fresh_model(planner_config, config.seed + 7919 * it)
        student, hist = train(
            student, pseudo, stage_config("pretrain"), stage=f"pretrain_{it}",
            eval_manifest=eval_manifest, expected_kind="pseudo",
        )
        ckpt = out_dir / f"pretrained_{it}.pt"
        save_checkpoint(student, ckpt, train_steps=len(hist.epochs))
        hist.save(out_dir / f"pretrained_{it}_history.json")
        checkpoints[f"pretrained_{it}"] = ckpt
        histories[f"pretrained_{it}"] = hist

        student, hist = train(
            student, labeled, stage_config("finetune"), stage=f"finetuned_{it}",
            eval_manifest=eval_manifest, expected_kind="labeled",
        )
        ckpt = out_dir / f"finetuned_{it}.pt"
        save_checkpoint(student, ckpt, train_steps=len(hist.epochs))
        hist.save(out_dir / f"finetuned_{it}_history.json")
        checkpoints[f"finetuned_{it}"] = ckpt
        histories[f"finetuned_{it}"] = hist
        current_teacher = student

    return SelfTrainResult(
        checkpoints=checkpoints, histories=histories, pseudo_manifests=pseudo_paths
    )
