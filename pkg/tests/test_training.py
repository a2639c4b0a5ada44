import numpy as np
import pytest

from trajpred import autodiff as ad
from trajpred.lowlevel import evaluate_seq, generate_drive, subset, train_seq
from trajpred.metrics import REPORT_COLUMNS, MetricReport
from trajpred.models import FROZEN_BLOCKS, SeqRegressor, TinyEncoder
from trajpred.scene import SyntheticConfig, generate_synthetic
from trajpred.training import (
    cosine_lr,
    finetune,
    predict,
    prepare,
    pretrain_encoder,
    split_indices,
    split_of,
)
from trajpred.trajset import build_cover


@pytest.fixture(scope="module")
def small():
    return prepare(generate_synthetic(SyntheticConfig(count=50), 0))


@pytest.fixture(scope="module")
def pretrain_set():
    return prepare(generate_synthetic(SyntheticConfig(count=500), 1))


def lower_bytes(arrays):
    return {k: v.tobytes() for k, v in arrays.items() if int(k.split(".")[1][-1]) < FROZEN_BLOCKS}


# --- pretraining ----------------------------------------------------------------


@pytest.mark.slow
def test_rotation_pretraining_separates(pretrain_set):
    result = pretrain_encoder(pretrain_set, "rotation4", epochs=20, seed=0)
    assert result.train_accuracy > 0.9
    assert result.losses[-1] < result.losses[0]


def test_pretraining_deterministic(small):
    a = pretrain_encoder(small, "rotation4", epochs=2, seed=3)
    b = pretrain_encoder(small, "rotation4", epochs=2, seed=3)
    assert ad.checkpoint_bytes(a.encoder.named_arrays()) == ad.checkpoint_bytes(b.encoder.named_arrays())
    c = pretrain_encoder(small, "rotation4", epochs=2, seed=4)
    assert ad.checkpoint_bytes(a.encoder.named_arrays()) != ad.checkpoint_bytes(c.encoder.named_arrays())


def test_pretraining_zero_epochs_is_initialization(small):
    for task in ("rotation4", "agent_count"):
        result = pretrain_encoder(small, task, epochs=0, seed=5)
        init = TinyEncoder(5, small.images.shape[-1])
        assert ad.checkpoint_bytes(result.encoder.named_arrays()) == ad.checkpoint_bytes(init.named_arrays())


def test_agent_count_pretraining_reduces_loss(small):
    result = pretrain_encoder(small, "agent_count", epochs=5, seed=0)
    assert result.losses[-1] < result.losses[0]


def test_unknown_pretraining_task(small):
    with pytest.raises(ValueError, match="jigsaw"):
        pretrain_encoder(small, "jigsaw", epochs=1)


# --- fine-tuning ----------------------------------------------------------------


def test_frozen_blocks_equal_initialization_after_zero_epochs(small):
    result = finetune(None, "mtp", True, small, None, epochs=0, seed=2)
    init = TinyEncoder(2, small.images.shape[-1]).named_arrays()
    assert lower_bytes(result.model.encoder.named_arrays()) == lower_bytes(init)


@pytest.mark.parametrize("head", ["covernet", "mtp"])
def test_frozen_blocks_unchanged_by_training(small, head):
    tset = build_cover(list(small.gts), 2.0)
    source = pretrain_encoder(small, "rotation4", epochs=1, seed=1).encoder.named_arrays()
    result = finetune(source, head, True, small, None, epochs=3, seed=1, tset=tset, hidden=16)
    trained = result.model.encoder.named_arrays()
    assert lower_bytes(trained) == lower_bytes(source)
    assert not np.array_equal(trained["encoder.block3.w"], source["encoder.block3.w"])


def test_unfrozen_training_moves_all_blocks(small):
    result = finetune(None, "mtp", False, small, None, epochs=1, seed=1, hidden=16)
    init = TinyEncoder(1, small.images.shape[-1]).named_arrays()
    trained = result.model.encoder.named_arrays()
    assert all(not np.array_equal(trained[k], init[k]) for k in init if k.endswith(".w"))


@pytest.mark.parametrize("head", ["covernet", "mtp"])
def test_loss_decreases_on_small_set(small, head):
    tset = build_cover(list(small.gts), 1.0)
    result = finetune(None, head, True, small, None, epochs=15, seed=0, lr=3e-3, tset=tset, hidden=64, batch_size=8)
    assert result.losses[-1] < result.losses[0]


def test_two_seeds_give_distinct_valid_reports(small):
    tset = build_cover(list(small.gts), 2.0)
    reports = [finetune(None, "covernet", True, small, small, epochs=2, seed=s, tset=tset, hidden=16).report for s in (0, 1)]
    assert reports[0] != reports[1]
    for r in reports:
        assert set(r.row()) == set(REPORT_COLUMNS)
        assert MetricReport.from_json(r.to_json()) == r
        assert 0 <= r.hitrate_5_2m <= 1 and r.minade10 <= r.minade5 <= r.minade1


def test_finetune_deterministic(small):
    runs = [finetune(None, "mtp", True, small, small, epochs=2, seed=4, hidden=16) for _ in range(2)]
    a, b = (ad.checkpoint_bytes(r.model.named_arrays()) for r in runs)
    assert a == b and runs[0].report == runs[1].report


def test_covernet_needs_trajectory_set(small):
    with pytest.raises(ValueError):
        finetune(None, "covernet", True, small, None, epochs=1, seed=0)


def test_encoder_shape_mismatch_rejected(small):
    wrong = TinyEncoder(0, 80).named_arrays()
    wrong["encoder.block0.w"] = np.zeros((8, 4, 3, 3))
    with pytest.raises(ad.CheckpointError):
        finetune(wrong, "mtp", True, small, None, epochs=0, seed=0)


def test_prediction_independent_of_instance_order(small):
    model = finetune(None, "mtp", True, small, None, epochs=1, seed=0, hidden=16).model
    order = np.random.default_rng(0).permutation(len(small))
    straight = predict(model, small)
    shuffled = predict(model, small.subset(order))
    for i, j in enumerate(order):
        assert np.array_equal(shuffled[i].trajectories, straight[j].trajectories)


def test_cosine_schedule():
    assert cosine_lr(1e-3, 0, 10) == 1e-3
    assert cosine_lr(1e-3, 5, 10) == pytest.approx(5e-4)
    values = [cosine_lr(1.0, e, 10) for e in range(10)]
    assert values == sorted(values, reverse=True)


# --- splits -----------------------------------------------------------------------


def test_split_stable_and_proportional():
    parts = split_indices(5000)
    assert sorted(np.concatenate(list(parts.values())).tolist()) == list(range(5000))
    assert abs(len(parts["train"]) / 5000 - 0.6) < 0.03
    assert abs(len(parts["test"]) / 5000 - 0.2) < 0.03
    # growing the dataset never moves an existing instance
    small = split_indices(300)
    for name, idx in small.items():
        assert all(split_of(i) == name for i in idx)
        assert set(idx.tolist()) <= set(parts[name].tolist())


# --- low-level regressor ----------------------------------------------------------


def test_sequence_regressor_learns():
    data = generate_drive(600, 0)
    train, test = subset(data, np.arange(500)), subset(data, np.arange(500, 600))
    model = SeqRegressor(seed=0)
    before = evaluate_seq(model, test)
    history = train_seq(model, train, epochs=30, lr=3e-3)
    after = evaluate_seq(model, test)
    assert history[-1] < history[0]
    assert after["speed_mse"] < 0.5 * before["speed_mse"]
    assert after["angle_mse"] < 0.5 * before["angle_mse"]


def test_drive_generator_deterministic():
    a, b = generate_drive(20, 3), generate_drive(20, 3)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["speed"], generate_drive(20, 4)["speed"])
