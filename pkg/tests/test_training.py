import numpy as np
import pytest
import torch

from selfd.core import Command, labeled_record, read_manifest, save_image, unlabeled_record, write_manifest
from selfd.planner import WaypointPlanner, load_checkpoint
from selfd.pseudo import SamplingStrategy
from selfd.training import (
    PlanDataset,
    TrainConfig,
    TrainingFault,
    evaluate_open_loop,
    run_selfd,
    train,
)


def synthetic_targets(speed, command, k=3):
    """Smooth, learnable mapping from (speed, command) to waypoints."""
    ks = np.arange(1, k + 1)
    fwd = speed * 0.5 * ks
    turn = {1: 0.4, 2: 0.0, 3: -0.4}[int(command)]
    left = turn * ks ** 2 * 0.2
    return np.stack([fwd, left], axis=1)


def make_labeled_manifest(root, config, n=24, seed=0, nan_at=None):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        rel = f"images/l/{i:03d}.png"
        img = (rng.random((config.input_height, config.input_width, 3)) * 255).astype(np.uint8)
        save_image(img, root / rel)
        speed = float(rng.uniform(0, 10))
        command = Command(int(rng.integers(1, 4)))
        wps = synthetic_targets(speed, command, config.num_waypoints)
        if nan_at is not None and i == nan_at:
            wps = wps.copy()
            wps[0, 0] = np.nan
        records.append(labeled_record(rel, "l-0000", i, speed, command, wps))
    return write_manifest(records, root / f"labeled_{seed}_{nan_at}.jsonl", split="labeled", seed=seed)


def make_unlabeled_manifest(root, config, n=8, seed=1):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        rel = f"images/u/{i:03d}.png"
        img = (rng.random((config.input_height, config.input_width, 3)) * 255).astype(np.uint8)
        save_image(img, root / rel)
        records.append(unlabeled_record(rel, "u-0000", i))
    return write_manifest(records, root / "unlabeled.jsonl", split="unlabeled", seed=seed)


def train_config(config, **kw):
    base = dict(
        batch_size=8,
        epochs=2,
        seed=0,
        input_width=config.input_width,
        input_height=config.input_height,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_overfit_single_sample(tmp_path, tiny_planner_config):
    manifest = make_labeled_manifest(tmp_path, tiny_planner_config, n=1)
    torch.manual_seed(0)
    model = WaypointPlanner(tiny_planner_config)
    cfg = train_config(
        tiny_planner_config, batch_size=1, epochs=200, lambda_quality=0.0, learning_rate=5e-3
    )
    model, hist = train(model, manifest, cfg, stage="memorize")
    assert hist.epochs[-1].loss_plan < 1e-2


def test_zero_lambda_gives_zero_quality_gradients(tmp_path, tiny_planner_config):
    manifest = make_labeled_manifest(tmp_path, tiny_planner_config, n=8)
    torch.manual_seed(1)
    model = WaypointPlanner(tiny_planner_config)
    data = PlanDataset(manifest)
    images, speeds, commands, targets = data.batch(np.arange(8))
    from selfd.planner import compute_loss, per_sample_ade, quality_target_for

    wps, q = model(images, speeds, commands)
    q_target = quality_target_for(per_sample_ade(wps.detach(), targets), 1.0)
    terms = compute_loss(wps, targets, q, q_target, lambda_quality=0.0)
    terms.total.backward()
    for p in model.quality_head.parameters():
        assert p.grad is None or torch.all(p.grad == 0)


def test_fixed_seed_reproduces_loss_sequence(tmp_path, tiny_planner_config):
    manifest = make_labeled_manifest(tmp_path, tiny_planner_config, n=24)
    losses = []
    for _ in range(2):
        torch.manual_seed(5)
        model = WaypointPlanner(tiny_planner_config)
        _, hist = train(model, manifest, train_config(tiny_planner_config, epochs=3, seed=5))
        losses.append([e.loss_total for e in hist.epochs])
    assert losses[0] == losses[1]


def test_nonfinite_loss_aborts_and_restores(tmp_path, tiny_planner_config):
    manifest = make_labeled_manifest(tmp_path, tiny_planner_config, n=8, nan_at=3)
    torch.manual_seed(2)
    model = WaypointPlanner(tiny_planner_config)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    with pytest.raises(TrainingFault):
        train(model, manifest, train_config(tiny_planner_config, batch_size=8, epochs=1))
    after = model.state_dict()
    for k in before:
        assert torch.equal(before[k], after[k])


def test_train_rejects_wrong_kind(tmp_path, tiny_planner_config):
    manifest = make_labeled_manifest(tmp_path, tiny_planner_config, n=4)
    torch.manual_seed(3)
    model = WaypointPlanner(tiny_planner_config)
    with pytest.raises(ValueError, match="expected only"):
        train(model, manifest, train_config(tiny_planner_config), expected_kind="pseudo")


def test_resolution_mismatch_rejected(tmp_path, tiny_planner_config):
    manifest = make_labeled_manifest(tmp_path, tiny_planner_config, n=4)
    torch.manual_seed(4)
    model = WaypointPlanner(tiny_planner_config)
    bad = TrainConfig(input_width=64, input_height=64, epochs=1)
    with pytest.raises(ValueError, match="resolution"):
        train(model, manifest, bad)


def test_evaluation_is_pure(tmp_path, tiny_planner_config):
    manifest = make_labeled_manifest(tmp_path, tiny_planner_config, n=12)
    torch.manual_seed(6)
    model = WaypointPlanner(tiny_planner_config)
    a = evaluate_open_loop(model, manifest)
    b = evaluate_open_loop(model, manifest)
    assert a.ade == b.ade and a.fde == b.fde
    assert a.count == 12


def test_run_selfd_stage_counts_and_separation(tmp_path, tiny_planner_config):
    labeled = make_labeled_manifest(tmp_path, tiny_planner_config, n=12)
    unlabeled = make_unlabeled_manifest(tmp_path, tiny_planner_config, n=6)
    cfg = train_config(tiny_planner_config, epochs=1)
    strategy = SamplingStrategy(samples_per_frame=3)
    result = run_selfd(
        labeled, unlabeled, tiny_planner_config, cfg, tmp_path / "run1",
        strategy=strategy, iterations=1,
    )
    assert set(result.checkpoints) == {"teacher", "pretrained_1", "finetuned_1"}

    # teacher and student initializations differ (student is from scratch)
    teacher, tmeta = load_checkpoint(result.checkpoints["teacher"])
    pre, pmeta = load_checkpoint(result.checkpoints["pretrained_1"])
    assert tmeta["fingerprint"] != pmeta["fingerprint"]

    # stage/dataset separation: pretraining saw only the pseudo manifest,
    # fine-tuning only the labeled manifest
    pseudo = read_manifest(result.pseudo_manifests["iteration_1"])
    assert result.histories["pretrained_1"].dataset_fingerprint == pseudo.fingerprint()
    assert result.histories["finetuned_1"].dataset_fingerprint == labeled.fingerprint()
    assert pseudo.fingerprint() != labeled.fingerprint()
    assert {r.kind for r in pseudo.records} == {"pseudo"}


def test_run_selfd_two_iterations_emits_five_checkpoints(tmp_path, tiny_planner_config):
    labeled = make_labeled_manifest(tmp_path, tiny_planner_config, n=8)
    unlabeled = make_unlabeled_manifest(tmp_path, tiny_planner_config, n=4)
    cfg = train_config(tiny_planner_config, epochs=1)
    result = run_selfd(
        labeled, unlabeled, tiny_planner_config, cfg, tmp_path / "run2",
        strategy=SamplingStrategy(samples_per_frame=2), iterations=2,
    )
    assert set(result.checkpoints) == {
        "teacher", "pretrained_1", "finetuned_1", "pretrained_2", "finetuned_2",
    }
    assert len(result.checkpoints) == 5


def test_train_config_validation_and_paper_scale():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_quality=-1.0)
    paper = TrainConfig.paper_scale()
    assert (paper.batch_size, paper.epochs) == (96, 128)
    assert (paper.input_width, paper.input_height) == (400, 225)
