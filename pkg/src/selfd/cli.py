"""Command-line entry point.

Subcommands cover the pipeline stages (generate-data, train-teacher,
pseudo-label, pretrain, finetune, run-all), evaluation (eval --open-loop /
--closed-loop), and the scripted studies (experiment <name>). Stage commands
take a JSON config file plus a few common flag overrides; every run writes
checkpoints and per-stage history files under --out.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch


def _load_json_config(path, cls, **overrides):
    data = {}
    if path:
        data = json.loads(Path(path).read_text())
    data.update({k: v for k, v in overrides.items() if v is not None})
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise SystemExit(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**data)


def _add_common(p):
    p.add_argument("--config", help="JSON config file for this command")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="runs/cli", help="output directory")


def _planner_config(args):
    from .planner.model import PlannerConfig

    if getattr(args, "planner_config", None):
        return PlannerConfig.from_dict(json.loads(Path(args.planner_config).read_text()))
    return PlannerConfig()


def _train_config(args):
    from .training import TrainConfig

    return _load_json_config(
        args.config,
        TrainConfig,
        seed=args.seed,
        epochs=getattr(args, "epochs", None),
    )


def _strategy(args):
    from .core.types import SamplingKind
    from .pseudo import SamplingStrategy, SpeedHistogram

    kind = SamplingKind[args.strategy.upper()]
    kwargs = dict(kind=kind, samples_per_frame=args.samples_per_frame)
    if kind == SamplingKind.PRIOR:
        from .core.manifest import read_manifest
        from .core.types import COMMANDS

        labeled = read_manifest(args.labeled)
        counts = np.array(
            [sum(1 for r in labeled.records if r.command == int(c)) for c in COMMANDS],
            dtype=np.float64,
        )
        kwargs["command_weights"] = tuple(counts / counts.sum())
        kwargs["speed_prior"] = SpeedHistogram.from_speeds(
            [r.speed for r in labeled.records]
        )
    return SamplingStrategy(**kwargs)


def cmd_generate_data(args):
    from .sim.datasets import GenerateConfig, generate_dataset

    config = _load_json_config(
        args.config,
        GenerateConfig,
        labeled_frames=args.labeled_frames,
        unlabeled_frames=args.unlabeled_frames,
        eval_frames=args.eval_frames,
    )
    manifests = generate_dataset(args.out, args.seed or 0, config)
    for m in manifests:
        print(f"{m.split}: {len(m)} records -> {m.path}")


def cmd_train_teacher(args):
    from .core.manifest import read_manifest
    from .planner.checkpoint import save_checkpoint
    from .planner.model import WaypointPlanner
    from .training import train

    tcfg = _train_config(args)
    torch.manual_seed(tcfg.seed)
    model = WaypointPlanner(_planner_config(args))
    model, hist = train(
        model, read_manifest(args.labeled), tcfg, stage="teacher", expected_kind="labeled"
    )
    out = Path(args.out)
    fp = save_checkpoint(model, out / "teacher.pt", train_steps=len(hist.epochs))
    hist.save(out / "teacher_history.json")
    print(f"teacher checkpoint {fp} -> {out / 'teacher.pt'}")


def cmd_pseudo_label(args):
    from .core.manifest import read_manifest
    from .planner.checkpoint import load_checkpoint
    from .pseudo import build_pseudo_dataset

    teacher, _ = load_checkpoint(args.teacher)
    manifest = build_pseudo_dataset(
        read_manifest(args.unlabeled),
        teacher,
        _strategy(args),
        args.sigma_min,
        Path(args.out) / "pseudo.jsonl",
        master_seed=args.seed or 0,
    )
    print(f"pseudo-labeled {len(manifest)} records -> {manifest.path}")


def _train_stage(args, stage, expected_kind, init_from=None):
    from .core.manifest import read_manifest
    from .planner.checkpoint import load_checkpoint, save_checkpoint
    from .planner.model import WaypointPlanner
    from .training import train

    tcfg = _train_config(args)
    if init_from:
        model, _ = load_checkpoint(init_from)
    else:
        torch.manual_seed(tcfg.seed + 7919)
        model = WaypointPlanner(_planner_config(args))
    model, hist = train(
        model, read_manifest(args.data), tcfg, stage=stage, expected_kind=expected_kind
    )
    out = Path(args.out)
    fp = save_checkpoint(model, out / f"{stage}.pt", train_steps=len(hist.epochs))
    hist.save(out / f"{stage}_history.json")
    print(f"{stage} checkpoint {fp} -> {out / f'{stage}.pt'}")


def cmd_pretrain(args):
    _train_stage(args, "pretrained", "pseudo")


def cmd_finetune(args):
    _train_stage(args, "finetuned", "labeled", init_from=args.init)


def cmd_run_all(args):
    from .core.manifest import read_manifest
    from .training import run_selfd

    tcfg = _train_config(args)
    result = run_selfd(
        args.labeled,
        args.unlabeled,
        _planner_config(args),
        tcfg,
        args.out,
        strategy=_strategy(args),
        sigma_min=args.sigma_min,
        iterations=args.iterations,
    )
    for name, path in result.checkpoints.items():
        print(f"{name}: {path}")


def cmd_eval(args):
    from .core.manifest import read_manifest
    from .planner.checkpoint import load_checkpoint
    from .training import evaluate_open_loop

    model, meta = load_checkpoint(args.checkpoint)
    if args.open_loop:
        report = evaluate_open_loop(model, read_manifest(args.data))
        print(json.dumps(report.to_dict(), indent=2))
    if args.closed_loop:
        from .control import PIDConfig
        from .metrics import ClosedLoopConfig, closed_loop_eval
        from .sim.datasets import GenerateConfig, closed_loop_world
        from .sim.world import Appearance

        gen = GenerateConfig()
        worlds = [
            closed_loop_world(args.seed or 0, i, gen, appearance=Appearance.preset(args.appearance))
            for i in range(args.routes)
        ]
        report = closed_loop_eval(
            model, PIDConfig(), worlds, gen.nominal_camera(), ClosedLoopConfig()
        )
        print(json.dumps(report.to_dict(), indent=2))
    if not (args.open_loop or args.closed_loop):
        raise SystemExit("choose --open-loop and/or --closed-loop")


def cmd_experiment(args):
    from .experiments import ABLATION_NAMES, ExperimentConfig, run_ablation

    config = _load_json_config(args.config, ExperimentConfig, out_dir=args.out)
    results = run_ablation(args.name, config)
    print(json.dumps({"ablation": args.name, "out_dir": config.out_dir}, indent=2))


def cmd_verify_pseudo(args):
    from .core.manifest import read_manifest
    from .planner.checkpoint import load_checkpoint
    from .pseudo import verify_pseudo_dataset

    teacher, _ = load_checkpoint(args.teacher)
    ok = verify_pseudo_dataset(
        args.pseudo,
        teacher,
        args.unlabeled,
        _strategy(args),
        sigma_min=args.sigma_min,
        master_seed=args.seed or 0,
    )
    print("verified: records match teacher re-inference" if ok else "MISMATCH")
    sys.exit(0 if ok else 1)


def main(argv=None):
    torch.set_num_threads(max(torch.get_num_threads(), 1))
    parser = argparse.ArgumentParser(prog="selfd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="generate labeled/unlabeled/eval splits")
    _add_common(p)
    p.add_argument("--labeled-frames", type=int, default=None)
    p.add_argument("--unlabeled-frames", type=int, default=None)
    p.add_argument("--eval-frames", type=int, default=None)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train-teacher", help="train the initial policy on labeled data")
    _add_common(p)
    p.add_argument("--labeled", required=True, help="labeled manifest path")
    p.add_argument("--planner-config", help="JSON planner config")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("pseudo-label", help="build the pseudo-labeled dataset")
    _add_common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--labeled", help="labeled manifest (needed for --strategy prior)")
    p.add_argument("--strategy", default="uniform", choices=["uniform", "prior"])
    p.add_argument("--samples-per-frame", type=int, default=6)
    p.add_argument("--sigma-min", type=float, default=0.0)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("pretrain", help="train a fresh model on pseudo-labels")
    _add_common(p)
    p.add_argument("--data", required=True, help="pseudo manifest path")
    p.add_argument("--planner-config")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on labeled data")
    _add_common(p)
    p.add_argument("--data", required=True, help="labeled manifest path")
    p.add_argument("--init", required=True, help="checkpoint to start from")
    p.add_argument("--planner-config")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("run-all", help="full staged run: teacher, pseudo, pretrain, finetune")
    _add_common(p)
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--planner-config")
    p.add_argument("--strategy", default="uniform", choices=["uniform", "prior"])
    p.add_argument("--samples-per-frame", type=int, default=6)
    p.add_argument("--sigma-min", type=float, default=0.0)
    p.add_argument("--iterations", type=int, default=1)
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="eval manifest (open loop)")
    p.add_argument("--open-loop", action="store_true")
    p.add_argument("--closed-loop", action="store_true")
    p.add_argument("--routes", type=int, default=10)
    p.add_argument("--appearance", default="day", choices=["day", "dusk", "night", "rain"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a scripted comparison study")
    _add_common(p)
    p.add_argument("name", choices=["architecture", "whatif", "scaling", "closedloop", "iterations"])
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify-pseudo", help="re-check a pseudo dataset against its teacher")
    _add_common(p)
    p.add_argument("--pseudo", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--labeled")
    p.add_argument("--strategy", default="uniform", choices=["uniform", "prior"])
    p.add_argument("--samples-per-frame", type=int, default=6)
    p.add_argument("--sigma-min", type=float, default=0.0)
    p.set_defaults(func=cmd_verify_pseudo)

    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
