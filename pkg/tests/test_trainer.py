import numpy as np
import pandas as pd
import pytest

from flexbody import (
    TOOL_STATES,
    ConfigurationError,
    NoiseSpec,
    ToolDataset,
    TrainConfig,
    cog_is_supported,
    collect_dataset,
    dataset_to_parquet,
    init_fine_tune,
    load_dataset,
    pb_table,
    save_dataset,
    tool_state,
    train,
)
from flexbody import trainer
from flexbody.trainer import DEFAULT_CURATED_GRID
from flexbody.wtnpb import forward_batch

zero = NoiseSpec.zero()


def test_train_config_from_config(small_config):
    cfg = TrainConfig.from_config(small_config, "train", seed=4)
    assert cfg.epochs == 30
    assert cfg.hidden == (32, 16, 8, 16, 32)
    assert cfg.seed == 4
    assert not cfg.fine_tune
    tune = TrainConfig.from_config(small_config, "fine_tune")
    assert tune.fine_tune
    assert tune.epochs == 10
    assert tune.hidden == (32, 16, 8, 16, 32)


@pytest.mark.parametrize(
    "kwargs", [{"epochs": -1}, {"batch_size": 0}, {"lr": 0.0}, {"masks": ()}]
)
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


def test_collect_zero_samples(model):
    dataset = collect_dataset(model, tool_state("Short/Light"), 0)
    assert len(dataset) == 0
    assert dataset.to_matrix().shape == (0, 11)


def test_collected_samples_are_safe_and_complete(model, small_datasets):
    for k, dataset in enumerate(small_datasets):
        assert len(dataset) == 15
        assert dataset.k == k
        assert dataset.tool == TOOL_STATES[k]
        for sample in dataset.samples:
            assert all(sample.present)
            assert cog_is_supported(model, sample.x_cog, margin_mm=10.0 - 1e-6)


def test_collection_is_seeded(model):
    tool = tool_state("Long/Middle")
    a = collect_dataset(model, tool, 5, seed=11)
    b = collect_dataset(model, tool, 5, seed=11)
    assert np.array_equal(a.to_matrix(), b.to_matrix())


def test_curated_poses_come_from_the_grid(model):
    dataset = collect_dataset(
        model, tool_state("Short/Light"), 3, policy="curated", curated=3, noise=zero
    )
    assert len(dataset) == 3
    grids = list(DEFAULT_CURATED_GRID.values())
    for sample in dataset.samples:
        for angle, values in zip(sample.theta, grids):
            assert min(abs(angle - v) for v in values) < 1e-9


def test_collection_gives_up_when_nothing_is_acceptable(model):
    with pytest.raises(ConfigurationError):
        collect_dataset(model, tool_state("Long/Heavy"), 5, margin_mm=1000.0)


def test_unknown_policy(model):
    with pytest.raises(ValueError):
        collect_dataset(model, tool_state("Long/Heavy"), 5, policy="greedy")


def test_training_history(trained, small_datasets):
    bundle, history = trained
    assert len(history) == 30
    assert list(history.columns[:2]) == ["epoch", "loss"]
    mask_columns = [c for c in history if c.startswith("mask_")]
    assert len(mask_columns) == len(bundle.masks)
    n = sum(len(d) for d in small_datasets)
    assert (history[mask_columns].sum(axis=1) == n).all()
    assert history["loss"].iloc[-1] < history["loss"].iloc[0]


def test_mask_draws_are_uniform(trained, small_datasets):
    bundle, history = trained
    mask_columns = [c for c in history if c.startswith("mask_")]
    totals = history[mask_columns].sum()
    draws = totals.sum()
    share = 1 / len(bundle.masks)
    sigma = np.sqrt(draws * share * (1 - share))
    assert draws == len(history) * sum(len(d) for d in small_datasets)
    assert (np.abs(totals - draws * share) <= 3 * sigma).all()


def test_training_learns_distinct_pbs(trained):
    bundle, _ = trained
    assert bundle.pb.shape == (6, 2)
    assert len(np.unique(bundle.pb.round(12), axis=0)) == 6


def test_training_is_deterministic(small_datasets):
    cfg = TrainConfig(epochs=3, batch_size=32, hidden=(16, 8, 4, 8, 16), seed=5)
    first, history_1 = train(small_datasets, cfg)
    second, history_2 = train(small_datasets, cfg)
    pd.testing.assert_frame_equal(history_1, history_2)
    assert np.array_equal(first.pb, second.pb)
    assert np.array_equal(first.stack.weights[0], second.stack.weights[0])


def test_tool_without_data_keeps_zero_pb(small_datasets):
    datasets = list(small_datasets[:2]) + [ToolDataset(tool_state("Long/Heavy"), [], 2)]
    cfg = TrainConfig(epochs=3, batch_size=16, hidden=(16, 8, 4, 8, 16))
    bundle, _ = train(datasets, cfg)
    assert not bundle.pb[2].any()
    assert bundle.pb[0].any()


def test_step_leaves_pbs_of_absent_tools_alone(monkeypatch, small_datasets):
    datasets = list(small_datasets[:3])
    owner = {tuple(row): d.k for d in datasets for row in d.to_matrix()}
    steps = []

    def recording_forward(bundle, X, mask_bits, P):
        steps.append((bundle.pb.copy(), {owner[tuple(row)] for row in X}))
        return forward_batch(bundle, X, mask_bits, P)

    monkeypatch.setattr(trainer, "forward_batch", recording_forward)
    cfg = TrainConfig(epochs=2, batch_size=2, hidden=(16, 8, 4, 8, 16))
    bundle, _ = train(datasets, cfg)
    snapshots = [pb for pb, _ in steps] + [bundle.pb]
    skipped = 0
    for (before, in_batch), after in zip(steps, snapshots[1:]):
        for k in set(range(3)) - in_batch:
            skipped += 1
            assert np.array_equal(before[k], after[k])
        for k in in_batch:
            assert not np.array_equal(before[k], after[k])
    assert skipped > 0


def test_fine_tune_without_epochs_keeps_weights(bundle, small_datasets):
    cfg = TrainConfig(epochs=0, fine_tune=True)
    tuned, history = train(small_datasets[:3], cfg, init=bundle)
    assert history.empty
    assert not tuned.pb.any()
    assert [t.label for t in tuned.tools] == [d.tool.label for d in small_datasets[:3]]
    for a, b in zip(bundle.stack.weights, tuned.stack.weights):
        assert np.array_equal(a, b)
    assert np.array_equal(tuned.normalizer.mean, bundle.normalizer.mean)


def test_fine_tune_needs_initial_bundle(small_datasets):
    with pytest.raises(ConfigurationError):
        train(small_datasets, TrainConfig(epochs=1, fine_tune=True))


def test_init_fine_tune_does_not_touch_source(bundle):
    before = bundle.pb.copy()
    tuned = init_fine_tune(bundle, TOOL_STATES[:2])
    tuned.stack.weights[0][0, 0] += 1.0
    assert tuned.pb.shape == (2, 2)
    assert np.array_equal(bundle.pb, before)
    assert tuned.stack.weights[0][0, 0] != bundle.stack.weights[0][0, 0]


def test_pb_table(bundle):
    table = pb_table(bundle)
    assert list(table.columns) == ["label", "weight_g", "length_mm", "pb_0", "pb_1"]
    assert table["label"].tolist() == [t.label for t in TOOL_STATES]
    assert table[["pb_0", "pb_1"]].to_numpy() == pytest.approx(bundle.pb)


def test_dataset_file_round_trip(tmp_path, small_datasets):
    path = tmp_path / "dataset.jl"
    save_dataset(small_datasets[:2], path)
    loaded = load_dataset(path)
    assert [d.k for d in loaded] == [0, 1]
    assert [d.tool for d in loaded] == [d.tool for d in small_datasets[:2]]
    for before, after in zip(small_datasets, loaded):
        assert after.to_matrix() == pytest.approx(before.to_matrix(), rel=1e-12)

    parquet = tmp_path / "dataset.parquet"
    dataset_to_parquet(path, parquet)
    df = pd.read_parquet(parquet)
    assert len(df) == 30
    assert df["present_x_tool"].dtype == bool
