"""Scripted experiment suite: the desk-scale comparison studies.

Five named studies: ``architecture`` (projection-variant comparison on the
shifted eval split), ``whatif`` (pseudo-labeling strategies before/after
fine-tuning), ``scaling`` (eval error vs unlabeled pool size), ``closedloop``
(teacher vs fine-tuned student driving held-out routes), and ``iterations``
(a second self-training round runs end to end).

All cells within a study share datasets, seeds, and eval splits; only the
treatment varies. Heavy artifacts (datasets, checkpoints, evals) are cached
under a fingerprint of everything that produced them, so reruns and
overlapping studies reuse work instead of recomputing it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .core.manifest import DatasetManifest, read_manifest, write_manifest
from .core.types import COMMANDS, CameraSpec, Command, SamplingKind
from .control import PIDConfig
from .metrics import ClosedLoopConfig, MetricsReport, closed_loop_eval
from .planner.checkpoint import load_checkpoint, save_checkpoint
from .planner.model import (
    PlannerConfig,
    VARIANT_IMAGE_PLANE_HOMOGRAPHY,
    VARIANT_MULTI_BRANCH_BEV,
    VARIANT_SINGLE_BRANCH_BEV,
    WaypointPlanner,
)
from .pseudo import SamplingStrategy, SpeedHistogram, build_pseudo_dataset
from .sim.datasets import GenerateConfig, closed_loop_world
from .sim.world import Appearance
from .training import TrainConfig, evaluate_open_loop, run_selfd, train

ABLATION_NAMES = ("architecture", "whatif", "scaling", "closedloop", "iterations")

VARIANT_SHORT = {
    VARIANT_IMAGE_PLANE_HOMOGRAPHY: "fixed-homography",
    VARIANT_SINGLE_BRANCH_BEV: "single-branch",
    VARIANT_MULTI_BRANCH_BEV: "multi-branch",
}


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str = "runs"
    cache_dir: Optional[str] = None  # defaults to <out_dir>/cache
    seeds: Tuple[int, ...] = (0, 1, 2)
    labeled_frames: int = 2000
    unlabeled_frames: int = 20000
    eval_frames: int = 1000
    image_width: int = 128
    image_height: int = 72
    teacher_epochs: int = 20
    pretrain_epochs: int = 2
    finetune_epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 1e-3
    samples_per_frame: int = 3
    sigma_min: float = 0.0
    speed_range: Tuple[float, float] = (0.0, 12.0)
    scaling_pools: Tuple[int, ...] = (2500, 5000, 10000, 20000)
    routes: int = 10
    conditions: Tuple[str, ...] = ("day", "night")
    iterations_frames: int = 600  # reduced sizes for the iterations check
    parallel_note: str = "cells run sequentially; they are independent"

    def generate_config(self) -> GenerateConfig:
        return GenerateConfig(
            image_width=self.image_width,
            image_height=self.image_height,
            labeled_frames=self.labeled_frames,
            unlabeled_frames=self.unlabeled_frames,
            eval_frames=self.eval_frames,
        )

    def planner_config(self, variant: str = VARIANT_MULTI_BRANCH_BEV) -> PlannerConfig:
        camera = None
        if variant == VARIANT_IMAGE_PLANE_HOMOGRAPHY:
            camera = self.generate_config().nominal_camera()
        return PlannerConfig(
            input_width=self.image_width,
            input_height=self.image_height,
            variant=variant,
            homography_camera=camera,
        )

    def train_config(self, seed: int, epochs: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=epochs,
            seed=seed,
            input_width=self.image_width,
            input_height=self.image_height,
        )


def _fingerprint(*parts) -> str:
    text = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:14]


def _config_dict(cfg) -> dict:
    return json.loads(json.dumps(asdict(cfg), default=str))


class ExperimentRunner:
    """Shared dataset/checkpoint/eval plumbing with fingerprint caching."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.cache = Path(config.cache_dir) if config.cache_dir else self.out_dir / "cache"
        self.cache.mkdir(parents=True, exist_ok=True)
        self._eval_cache_path = self.cache / "evals.json"
        self._eval_cache = (
            json.loads(self._eval_cache_path.read_text())
            if self._eval_cache_path.exists()
            else {}
        )

    # ---- datasets ----

    def datasets(self, seed: int) -> Dict[str, Path]:
        gen = self.config.generate_config()
        key = _fingerprint("data", _config_dict(gen), seed)
        root = self.cache / f"data_{key}"
        paths = {name: root / f"{name}.jsonl" for name in ("labeled", "unlabeled", "eval")}
        if not all(p.exists() for p in paths.values()):
            from .sim.datasets import generate_dataset

            generate_dataset(root, seed, gen)
        return paths

    # ---- strategies ----

    def strategy(self, name: str, labeled: DatasetManifest) -> SamplingStrategy:
        cfg = self.config
        if name == "uniform":
            return SamplingStrategy(
                kind=SamplingKind.UNIFORM,
                speed_range=cfg.speed_range,
                samples_per_frame=cfg.samples_per_frame,
            )
        speeds = [r.speed for r in labeled.records]
        if name == "prior":
            counts = np.array(
                [sum(1 for r in labeled.records if r.command == int(c)) for c in COMMANDS],
                dtype=np.float64,
            )
            weights = tuple(float(w) for w in counts / counts.sum())
            return SamplingStrategy(
                kind=SamplingKind.PRIOR,
                speed_range=cfg.speed_range,
                command_weights=weights,
                samples_per_frame=cfg.samples_per_frame,
                speed_prior=SpeedHistogram.from_speeds(speeds),
            )
        if name == "wo_whatif":
            # Single guess per frame: command FORWARD at the labeled mean speed
            # (stand-in for recovering one (v, c) per frame instead of sampling).
            mean_v = float(np.mean(speeds))
            return SamplingStrategy(
                kind=SamplingKind.PRIOR,
                speed_range=cfg.speed_range,
                command_weights=(0.0, 1.0, 0.0),
                samples_per_frame=1,
                speed_prior=SpeedHistogram(
                    edges=(mean_v, mean_v + 1e-9), probs=(1.0,)
                ),
            )
        raise ValueError(f"unknown strategy {name!r}")

    # ---- checkpoints ----

    def teacher(self, seed: int, variant: str = VARIANT_MULTI_BRANCH_BEV) -> Path:
        cfg = self.config
        pcfg = cfg.planner_config(variant)
        tcfg = cfg.train_config(seed, cfg.teacher_epochs)
        data = self.datasets(seed)
        key = _fingerprint("teacher", _config_dict(pcfg), _config_dict(tcfg), str(data["labeled"]))
        path = self.cache / f"teacher_{VARIANT_SHORT[variant]}_{seed}_{key}.pt"
        if not path.exists():
            torch.manual_seed(seed)
            model = WaypointPlanner(pcfg)
            model, hist = train(
                model, read_manifest(data["labeled"]), tcfg, stage="teacher",
                expected_kind="labeled",
            )
            save_checkpoint(model, path, train_steps=len(hist.epochs))
            hist.save(path.with_suffix(".history.json"))
        return path

    def pseudo_manifest(self, seed: int, strategy_name: str) -> Path:
        cfg = self.config
        data = self.datasets(seed)
        labeled = read_manifest(data["labeled"])
        strat = self.strategy(strategy_name, labeled)
        teacher_path = self.teacher(seed)
        key = _fingerprint("pseudo", strategy_name, _config_dict(strat), str(teacher_path), seed)
        path = self.cache / f"pseudo_{strategy_name}_{seed}_{key}.jsonl"
        if not path.exists():
            teacher, _ = load_checkpoint(teacher_path)
            build_pseudo_dataset(
                read_manifest(data["unlabeled"]), teacher, strat, cfg.sigma_min, path,
                master_seed=seed,
            )
        return path

    def pseudo_subset(self, seed: int, strategy_name: str, pool_frames: int) -> Path:
        """Restrict a pseudo manifest to the first ``pool_frames`` source frames.

        Per-frame rng streams are keyed by frame position, so this equals
        regenerating from a prefix pool.
        """
        full_path = self.pseudo_manifest(seed, strategy_name)
        if pool_frames >= self.config.unlabeled_frames:
            return full_path
        path = full_path.with_name(full_path.stem + f"_pool{pool_frames}.jsonl")
        if not path.exists():
            data = self.datasets(seed)
            unlabeled = read_manifest(data["unlabeled"])
            allowed = {
                (r.episode_id, r.frame_index) for r in unlabeled.records[:pool_frames]
            }
            full = read_manifest(full_path)
            subset = [r for r in full.records if (r.episode_id, r.frame_index) in allowed]
            write_manifest(subset, path, split=f"pseudo[{pool_frames}]", seed=seed)
        return path

    def student(self, seed: int, strategy_name: str, pool_frames: Optional[int] = None) -> Dict[str, Path]:
        """Pre-train on the pseudo set, then fine-tune on the labeled set."""
        cfg = self.config
        data = self.datasets(seed)
        pool = pool_frames if pool_frames is not None else cfg.unlabeled_frames
        pseudo_path = self.pseudo_subset(seed, strategy_name, pool)
        pcfg = cfg.planner_config()
        pre_cfg = cfg.train_config(seed, cfg.pretrain_epochs)
        fin_cfg = cfg.train_config(seed, cfg.finetune_epochs)
        key = _fingerprint(
            "student", strategy_name, pool, _config_dict(pcfg),
            _config_dict(pre_cfg), _config_dict(fin_cfg), str(pseudo_path),
        )
        pre_path = self.cache / f"pretrained_{strategy_name}_{pool}_{seed}_{key}.pt"
        fin_path = self.cache / f"finetuned_{strategy_name}_{pool}_{seed}_{key}.pt"
        if not (pre_path.exists() and fin_path.exists()):
            torch.manual_seed(seed + 7919)
            model = WaypointPlanner(pcfg)
            model, hist = train(
                model, read_manifest(pseudo_path), pre_cfg, stage="pretrain",
                expected_kind="pseudo",
            )
            save_checkpoint(model, pre_path, train_steps=len(hist.epochs))
            model, hist = train(
                model, read_manifest(data["labeled"]), fin_cfg, stage="finetune",
                expected_kind="labeled",
            )
            save_checkpoint(model, fin_path, train_steps=len(hist.epochs))
        return {"pretrained": pre_path, "finetuned": fin_path}

    # ---- evaluation ----

    def eval_ade(self, ckpt_path: Path, seed: int) -> Dict[str, float]:
        data = self.datasets(seed)
        key = _fingerprint("eval", str(ckpt_path), str(data["eval"]))
        if key not in self._eval_cache:
            model, _ = load_checkpoint(ckpt_path)
            report = evaluate_open_loop(model, read_manifest(data["eval"]))
            self._eval_cache[key] = report.to_dict()
            self._eval_cache_path.write_text(json.dumps(self._eval_cache, indent=1))
        return self._eval_cache[key]


def _median(values: Sequence[float]) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def _write_table(path: Path, headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    widths = [
        max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
        for i, h in enumerate(headers)
    ]
    lines = [
        "  ".join(str(h).ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for r in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    text = "\n".join(lines) + "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return text


def _save_results(out: Path, name: str, results: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(json.dumps(results, indent=2, default=str))


def _plot_bars(path: Path, labels: Sequence[str], values: Sequence[float], title: str, ylabel: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_line(path: Path, xs, ys_by_label: Dict[str, Sequence[float]], title: str, xlabel: str, ylabel: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for label, ys in ys_by_label.items():
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def run_architecture_ablation(config: ExperimentConfig) -> dict:
    """Projection-variant comparison on the shifted (random-camera) eval split."""
    runner = ExperimentRunner(config)
    out = Path(config.out_dir) / "architecture"
    variants = (
        VARIANT_IMAGE_PLANE_HOMOGRAPHY,
        VARIANT_SINGLE_BRANCH_BEV,
        VARIANT_MULTI_BRANCH_BEV,
    )
    cells: Dict[str, Dict[int, Optional[dict]]] = {v: {} for v in variants}
    for seed in config.seeds:
        for variant in variants:
            try:
                ckpt = runner.teacher(seed, variant)
                cells[variant][seed] = runner.eval_ade(ckpt, seed)
            except Exception as exc:  # a failed cell is recorded, not fatal
                cells[variant][seed] = {"error": repr(exc)}
    results = {"cells": cells, "medians": {}}
    rows = []
    for variant in variants:
        ades = [c["ade"] for c in cells[variant].values() if c and "ade" in c]
        med = _median(ades) if ades else float("nan")
        results["medians"][variant] = med
        rows.append(
            [VARIANT_SHORT[variant]]
            + [f"{cells[variant][s].get('ade', float('nan')):.3f}" for s in config.seeds]
            + [f"{med:.3f}"]
        )
    table = _write_table(
        out / "table.txt",
        ["variant"] + [f"seed {s}" for s in config.seeds] + ["median ADE (m)"],
        rows,
    )
    _plot_bars(
        out / "ade_by_variant.png",
        [VARIANT_SHORT[v] for v in variants],
        [results["medians"][v] for v in variants],
        "Eval ADE by projection variant",
        "median ADE (m)",
    )
    _save_results(out, "architecture", results)
    return results


WHATIF_STRATEGIES = ("wo_whatif", "prior", "uniform")


def run_whatif_ablation(config: ExperimentConfig) -> dict:
    """Pseudo-labeling strategy comparison, pre-trained and fine-tuned."""
    runner = ExperimentRunner(config)
    out = Path(config.out_dir) / "whatif"
    results: dict = {"teacher": {}, "strategies": {}}
    for seed in config.seeds:
        results["teacher"][seed] = runner.eval_ade(runner.teacher(seed), seed)
    for name in WHATIF_STRATEGIES:
        results["strategies"][name] = {"pretrained": {}, "finetuned": {}}
        for seed in config.seeds:
            try:
                ck = runner.student(seed, name)
                for stage in ("pretrained", "finetuned"):
                    results["strategies"][name][stage][seed] = runner.eval_ade(ck[stage], seed)
            except Exception as exc:
                results["strategies"][name]["pretrained"][seed] = {"error": repr(exc)}
                results["strategies"][name]["finetuned"][seed] = {"error": repr(exc)}

    def med(cells: dict) -> float:
        vals = [c["ade"] for c in cells.values() if isinstance(c, dict) and "ade" in c]
        return _median(vals) if vals else float("nan")

    teacher_med = med(results["teacher"])
    results["medians"] = {"teacher": teacher_med}
    rows = [["teacher (labeled only)", "-", f"{teacher_med:.3f}", "-"]]
    for name in WHATIF_STRATEGIES:
        for stage in ("pretrained", "finetuned"):
            m = med(results["strategies"][name][stage])
            results["medians"][f"{name}/{stage}"] = m
            improvement = (teacher_med - m) / teacher_med * 100 if teacher_med else float("nan")
            rows.append([name, stage, f"{m:.3f}", f"{improvement:+.1f}%"])
    _write_table(
        out / "table.txt",
        ["strategy", "stage", "median ADE (m)", "vs teacher"],
        rows,
    )
    _plot_bars(
        out / "ade_by_strategy.png",
        ["teacher"] + [f"{n}\n(fine-tuned)" for n in WHATIF_STRATEGIES],
        [teacher_med]
        + [results["medians"][f"{n}/finetuned"] for n in WHATIF_STRATEGIES],
        "Eval ADE by pseudo-labeling strategy",
        "median ADE (m)",
    )
    _save_results(out, "whatif", results)
    return results


def run_scaling_ablation(config: ExperimentConfig) -> dict:
    """Eval ADE after fine-tuning vs unlabeled pool size."""
    runner = ExperimentRunner(config)
    out = Path(config.out_dir) / "scaling"
    results: dict = {"pools": {}, "teacher": {}}
    for seed in config.seeds:
        results["teacher"][seed] = runner.eval_ade(runner.teacher(seed), seed)
    for pool in config.scaling_pools:
        results["pools"][pool] = {}
        for seed in config.seeds:
            try:
                ck = runner.student(seed, "uniform", pool_frames=pool)
                results["pools"][pool][seed] = runner.eval_ade(ck["finetuned"], seed)
            except Exception as exc:
                results["pools"][pool][seed] = {"error": repr(exc)}
    medians = {}
    rows = []
    for pool in config.scaling_pools:
        vals = [c["ade"] for c in results["pools"][pool].values() if "ade" in c]
        medians[pool] = _median(vals) if vals else float("nan")
        rows.append([pool, f"{medians[pool]:.3f}"])
    results["medians"] = medians
    _write_table(out / "table.txt", ["unlabeled frames", "median fine-tuned ADE (m)"], rows)
    _plot_line(
        out / "ade_vs_pool.png",
        list(config.scaling_pools),
        {"fine-tuned": [medians[p] for p in config.scaling_pools]},
        "Eval ADE vs unlabeled pool size",
        "unlabeled frames",
        "median ADE (m)",
    )
    _save_results(out, "scaling", results)
    return results


def run_closed_loop_ablation(config: ExperimentConfig) -> dict:
    """Teacher vs fine-tuned student on held-out routes, two appearances."""
    runner = ExperimentRunner(config)
    out = Path(config.out_dir) / "closedloop"
    seed = config.seeds[0]
    gen = config.generate_config()
    camera = gen.nominal_camera()
    models = {
        "teacher": load_checkpoint(runner.teacher(seed))[0],
        "finetuned": load_checkpoint(runner.student(seed, "uniform")["finetuned"])[0],
    }
    pid = PIDConfig()
    cl_cfg = ClosedLoopConfig()
    results: dict = {"conditions": {}, "aggregate": {}}
    rows = []
    for model_name, model in models.items():
        all_reports = []
        for condition in config.conditions:
            worlds = [
                closed_loop_world(seed, i, gen, appearance=Appearance.preset(condition))
                for i in range(config.routes)
            ]
            report = closed_loop_eval(
                model, pid, worlds, camera, cl_cfg, split=f"{model_name}/{condition}"
            )
            results["conditions"][f"{model_name}/{condition}"] = report.to_dict()
            all_reports.append(report)
            rows.append(
                [
                    model_name,
                    condition,
                    f"{report.success_rate:.2f}",
                    f"{report.route_completion:.2f}",
                    f"{report.collisions_per_10km:.1f}",
                ]
            )
        total_m = sum(r.meters_driven for r in all_reports)
        total_coll = sum(
            r.collisions_per_10km * r.meters_driven / 10000.0 for r in all_reports
        )
        results["aggregate"][model_name] = {
            "success_rate": float(np.mean([r.success_rate for r in all_reports])),
            "route_completion": float(np.mean([r.route_completion for r in all_reports])),
            "collisions_per_10km": total_coll * 10000.0 / max(total_m, 1.0),
            "meters_driven": total_m,
        }
    for model_name, agg in results["aggregate"].items():
        rows.append(
            [
                model_name,
                "ALL",
                f"{agg['success_rate']:.2f}",
                f"{agg['route_completion']:.2f}",
                f"{agg['collisions_per_10km']:.1f}",
            ]
        )
    _write_table(
        out / "table.txt",
        ["model", "condition", "SR", "RC", "coll/10km"],
        rows,
    )
    _plot_bars(
        out / "success_rate.png",
        list(results["aggregate"].keys()),
        [a["success_rate"] for a in results["aggregate"].values()],
        "Closed-loop success rate",
        "SR",
    )
    _save_results(out, "closedloop", results)
    return results


def run_iterations_check(config: ExperimentConfig) -> dict:
    """A second pseudo-label/re-train round runs end to end (no gain claimed)."""
    runner = ExperimentRunner(config)
    out = Path(config.out_dir) / "iterations"
    seed = config.seeds[0]
    small = replace(
        config,
        labeled_frames=config.iterations_frames,
        unlabeled_frames=config.iterations_frames,
        eval_frames=max(200, config.iterations_frames // 3),
        teacher_epochs=max(2, config.teacher_epochs // 4),
        pretrain_epochs=max(1, config.pretrain_epochs),
        finetune_epochs=max(2, config.finetune_epochs // 4),
    )
    small_runner = ExperimentRunner(replace(small, out_dir=str(out / "work")))
    data = small_runner.datasets(seed)
    result = run_selfd(
        data["labeled"],
        data["unlabeled"],
        small.planner_config(),
        small.train_config(seed, small.teacher_epochs),
        out / "selfd",
        strategy=small_runner.strategy("uniform", read_manifest(data["labeled"])),
        sigma_min=small.sigma_min,
        iterations=2,
        stage_epochs={
            "teacher": small.teacher_epochs,
            "pretrain": small.pretrain_epochs,
            "finetune": small.finetune_epochs,
        },
    )
    evals = {}
    for name, ckpt in result.checkpoints.items():
        model, _ = load_checkpoint(ckpt)
        evals[name] = evaluate_open_loop(model, read_manifest(data["eval"])).to_dict()
    rows = [[name, f"{e['ade']:.3f}", f"{e['fde']:.3f}"] for name, e in evals.items()]
    _write_table(out / "table.txt", ["checkpoint", "ADE (m)", "FDE (m)"], rows)
    results = {
        "checkpoints": {k: str(v) for k, v in result.checkpoints.items()},
        "evals": evals,
        "num_checkpoints": len(result.checkpoints),
    }
    _save_results(out, "iterations", results)
    return results


def run_ablation(name: str, config: ExperimentConfig) -> dict:
    """Dispatch a named study; see ABLATION_NAMES."""
    dispatch = {
        "architecture": run_architecture_ablation,
        "whatif": run_whatif_ablation,
        "scaling": run_scaling_ablation,
        "closedloop": run_closed_loop_ablation,
        "iterations": run_iterations_check,
    }
    if name not in dispatch:
        raise ValueError(f"unknown ablation {name!r}; choose from {ABLATION_NAMES}")
    return dispatch[name](config)
