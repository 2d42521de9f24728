import csv

import pytest
import torch

import modules.training as training
from modules.checkpoint import CheckpointError, checkpoint_path
from modules.cycle import LossWeights
from modules.datasets import make_pairs
from modules.networks import build_models
from modules.training import (
    STAGE2_LOG,
    STAGE3_LOG,
    TrainingDivergedError,
    checkpoint_dir,
    discriminator_step,
    generator_step,
    load_corpus_images,
    run_stage1,
    run_stage2,
    run_stage3,
    train_drpm,
)


@pytest.fixture
def pairs(manifest):
    return list(make_pairs(manifest, "train", ["noise", "smoke"], ["L2"], 4, seed=1, patch_size=32, scale=2))


def _fresh_bundle(config):
    torch.manual_seed(0)
    return build_models(config)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_stage1_without_epochs_keeps_random_weights(tiny_config, tiny_bundle, caplog) -> None:
    tiny_config.train.dam_epochs = 0
    before = [p.clone() for p in tiny_bundle.dam.parameters()]
    assert run_stage1(tiny_config, tiny_bundle, []) == []
    assert "dam_epochs is 0" in caplog.text
    assert all(torch.equal(a, b) for a, b in zip(before, tiny_bundle.dam.parameters()))
    assert checkpoint_path(checkpoint_dir(tiny_config), "dam").exists()


def test_stage1_resumes_a_finished_stage_without_training(tiny_config, manifest) -> None:
    images = load_corpus_images(manifest)
    history = run_stage1(tiny_config, _fresh_bundle(tiny_config), images)
    assert [r.step for r in history] == list(range(6))
    assert checkpoint_path(checkpoint_dir(tiny_config), "trainer", "stage1").exists()

    resumed = _fresh_bundle(tiny_config)
    again = run_stage1(tiny_config, resumed, images)
    assert again == history
    assert len(_rows(tiny_config.system.out_dir / "stage1_losses.csv")) == 6


def test_stage2_writes_losses_and_checkpoints(tiny_config, tiny_bundle, pairs) -> None:
    history = run_stage2(tiny_config, tiny_bundle, pairs=pairs)
    assert len(history) == 2
    rows = _rows(tiny_config.system.out_dir / STAGE2_LOG)
    assert [int(r["step"]) for r in rows] == [0, 1]
    assert all(float(r["l_cl"]) >= 0 for r in rows)
    for name in ("dam", "dgem", "heads", "discriminators"):
        assert checkpoint_path(checkpoint_dir(tiny_config), name).exists()


def test_stage2_draws_pairs_from_the_manifest(tiny_config, tiny_bundle, manifest) -> None:
    history = run_stage2(tiny_config, tiny_bundle, manifest=manifest)
    assert [row["step"] for row in history] == [0, 1]


def test_stage2_resume_matches_an_uninterrupted_run(tiny_config, pairs, tmp_path) -> None:
    tiny_config.train.single_epochs = 2
    tiny_config.system.out_dir = tmp_path / "straight"
    straight = _fresh_bundle(tiny_config)
    run_stage2(tiny_config, straight, pairs=pairs)

    tiny_config.system.out_dir = tmp_path / "interrupted"
    tiny_config.train.single_epochs = 1
    run_stage2(tiny_config, _fresh_bundle(tiny_config), pairs=pairs)
    tiny_config.train.single_epochs = 2
    resumed = _fresh_bundle(tiny_config)
    history = run_stage2(tiny_config, resumed, pairs=pairs)

    assert [row["epoch"] for row in history] == [1, 1, 2, 2]
    for a, b in zip(straight.dgem.state_dict().values(), resumed.dgem.state_dict().values()):
        assert torch.allclose(a, b, atol=1e-6)


def test_non_finite_loss_stops_training_with_a_dump(tiny_config, tiny_bundle, pairs, monkeypatch) -> None:
    objective = training.generator_objective

    def poisoned(*args, **kwargs):
        losses = objective(*args, **kwargs)
        losses["g_total"] = losses["g_total"] * float("nan")
        return losses

    monkeypatch.setattr(training, "generator_objective", poisoned)
    with pytest.raises(TrainingDivergedError) as exc:
        run_stage2(tiny_config, tiny_bundle, pairs=pairs)
    assert exc.value.dump_path.exists()
    dump = torch.load(exc.value.dump_path, weights_only=True)
    assert dump["batch"]["x_l"].shape == (2, 3, 16, 16)


def test_stage3_trains_only_the_propagator(tiny_config, tiny_bundle, manifest) -> None:
    frozen = {name: [p.clone() for p in getattr(tiny_bundle, name).parameters()] for name in ("dam", "heads", "dgem")}
    drpm_before = [p.clone() for p in tiny_bundle.drpm.parameters()]
    history = run_stage3(tiny_config, tiny_bundle, manifest)

    assert [row["source"] for row in history] == ["DAM", "DRPM", "DRPM", "DAM", "DRPM", "DRPM"]
    assert [row["distill"] == "" for row in history] == [True, False, False, True, False, False]
    for name, before in frozen.items():
        assert all(torch.equal(a, b) for a, b in zip(before, getattr(tiny_bundle, name).parameters())), name
    assert any(not torch.equal(a, b) for a, b in zip(drpm_before, tiny_bundle.drpm.parameters()))
    assert len(_rows(tiny_config.system.out_dir / STAGE3_LOG)) == 6


def test_train_drpm_requires_single_frame_checkpoints(tiny_config, tiny_bundle, manifest) -> None:
    with pytest.raises(CheckpointError, match="single-frame weights"):
        train_drpm(tiny_config, tiny_bundle, manifest)


def _snapshot(params):
    return [p.detach().clone() for p in params]


def _adversarial_setup(config, pairs):
    bundle = _fresh_bundle(config)
    x_l = torch.stack([p.x_l for p in pairs[:2]])
    x_h = torch.stack([p.x_h for p in pairs[:2]])
    generator = training._generator_params(bundle, config)
    opt_g = training._optimizer(generator, config.train.lr_g, config)
    opt_d = training._optimizer(bundle.discriminators.parameters(), config.train.lr_d, config)
    return bundle, x_l, x_h, generator, opt_g, opt_d


def test_generator_step_leaves_discriminators_untouched(tiny_config, pairs) -> None:
    bundle, x_l, x_h, generator, opt_g, _ = _adversarial_setup(tiny_config, pairs)
    weights = LossWeights.from_config(tiny_config.cycle)
    before_d, before_g = _snapshot(bundle.discriminators.parameters()), _snapshot(generator)
    generator_step(bundle, x_l, x_h, weights, tiny_config, opt_g, seed=3)
    assert all(torch.equal(a, b) for a, b in zip(before_d, bundle.discriminators.parameters()))
    assert any(not torch.equal(a, b) for a, b in zip(before_g, generator))
    assert all(p.requires_grad for p in bundle.discriminators.parameters())


def test_discriminator_step_leaves_generator_untouched(tiny_config, pairs) -> None:
    bundle, x_l, x_h, generator, _, opt_d = _adversarial_setup(tiny_config, pairs)
    weights = LossWeights.from_config(tiny_config.cycle)
    result, _ = generator_step(bundle, x_l, x_h, weights, tiny_config, None, seed=3)
    before_d, before_g = _snapshot(bundle.discriminators.parameters()), _snapshot(generator)
    discriminator_step(bundle, x_l, x_h, result, tiny_config, opt_d)
    assert all(torch.equal(a, b) for a, b in zip(before_g, generator))
    assert any(not torch.equal(a, b) for a, b in zip(before_d, bundle.discriminators.parameters()))
