import numpy as np
import pytest

from flexbody import (
    REGIMES,
    ConfigurationError,
    NoiseSpec,
    OnlineBuffer,
    OnlineConfig,
    OnlineEntry,
    StateSample,
    ToolDataset,
    TrainConfig,
    apply_regime,
    forward_batch,
    masked_loss,
    maybe_collect,
    observe,
    pb_distances,
    reduce_to_feasible,
    run_online,
    tool_state,
    train,
    update_pb,
)
from flexbody import net

zero = NoiseSpec.zero()


def _sample(
    theta=(45, 0, 45, -5),
    cog=(5, 0),
    tip=(150, 0, 200),
    pixel=(320, 240),
    present=(True,) * 4,
):
    return StateSample(
        np.array(theta, dtype=float),
        np.array(cog, dtype=float),
        np.array(tip, dtype=float),
        np.array(pixel, dtype=float),
        present=present,
    )


def _filled_buffer(samples, capacity=100):
    buffer = OnlineBuffer(capacity)
    for s in samples:
        buffer.entries.append(OnlineEntry(s, reduce_to_feasible(s.present), s.present))
    return buffer


def test_online_config_from_config(small_config):
    cfg = OnlineConfig.from_config(small_config, n_max=20)
    assert cfg.thresholds == (10.0, 3.0, 20.0, 100.0)
    assert cfg.n_max == 20
    assert cfg.n_thre == 5


@pytest.mark.parametrize(
    "kwargs",
    [{"n_thre": 0}, {"n_thre": 200}, {"thresholds": (1.0, 2.0, 3.0)}, {"lr": -0.1}],
)
def test_online_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        OnlineConfig(**kwargs)


def test_first_observation_is_collected():
    buffer = OnlineBuffer()
    assert maybe_collect(buffer, _sample())
    assert len(buffer) == 1
    assert str(buffer.entries[0].mask) == "1110"
    assert buffer.entries[0].present == (True, True, True, True)


def test_small_changes_are_ignored():
    buffer = OnlineBuffer()
    maybe_collect(buffer, _sample())
    assert not maybe_collect(buffer, _sample(theta=(50, 0, 45, -5), cog=(6, 1)))
    assert maybe_collect(buffer, _sample(theta=(56, 0, 45, -5)))
    assert maybe_collect(buffer, _sample(theta=(56, 0, 45, -5), pixel=(420, 300)))
    assert len(buffer) == 3


def test_change_is_measured_against_last_collected():
    buffer = OnlineBuffer()
    maybe_collect(buffer, _sample())
    for theta0 in [51, 54]:
        assert not maybe_collect(buffer, _sample(theta=(theta0, 0, 45, -5)))
    assert maybe_collect(buffer, _sample(theta=(56, 0, 45, -5)))


def test_newly_present_modality_is_collected():
    buffer = OnlineBuffer()
    maybe_collect(buffer, _sample(present=(True, True, False, False)))
    assert maybe_collect(buffer, _sample(present=(True, True, False, True)))
    assert str(buffer.entries[-1].mask) == "1101"


def test_sample_without_modalities():
    with pytest.raises(ValueError):
        maybe_collect(OnlineBuffer(), _sample(present=(False,) * 4))


def test_buffer_drops_oldest():
    buffer = OnlineBuffer(capacity=3)
    for k in range(5):
        maybe_collect(buffer, _sample(theta=(30 + 20 * k, 0, 45, -5)))
    assert len(buffer) == buffer.capacity == 3
    assert buffer.entries[0].sample.theta[0] == 70


def test_apply_regime():
    sample = _sample()
    reduced = apply_regime(sample, "C")
    assert reduced.present == REGIMES["C"]
    assert not reduced.x_tool.any()
    assert not reduced.s_tool.any()
    assert reduced.theta == pytest.approx(sample.theta)
    assert apply_regime(sample, "B").present == (True, True, False, True)
    with pytest.raises(ConfigurationError):
        apply_regime(sample, "D")


def test_update_waits_for_enough_entries(bundle, small_datasets):
    buffer = _filled_buffer(small_datasets[4].samples[:4])
    p = np.array([0.1, 0.2])
    new, updated = update_pb(buffer, bundle, p, net.MomentumState())
    assert not updated
    assert new == pytest.approx(p)


def test_update_moves_pb_with_weights_frozen(bundle, small_datasets):
    weights = [w.copy() for w in bundle.stack.weights]
    trained_pb = bundle.pb.copy()
    samples = [apply_regime(s, "B") for s in small_datasets[4].samples[:8]]
    buffer = _filled_buffer(samples)
    p = np.zeros(2)
    new, updated = update_pb(buffer, bundle, p, net.MomentumState(), OnlineConfig(epochs=3))
    assert updated
    assert not p.any()
    assert not np.allclose(new, p)
    for before, after in zip(weights, bundle.stack.weights):
        assert np.array_equal(before, after)
    assert np.array_equal(trained_pb, bundle.pb)


def test_pb_distances(bundle):
    distances = pb_distances(bundle, bundle.pb[2])
    assert len(distances) == 6
    assert distances["dist_Short/Heavy"] == 0
    assert min(distances.values()) == 0


def test_run_online_without_ticks(model, bundle):
    trajectory = run_online(model, bundle, tool_state("Long/Heavy"), ticks=0)
    assert len(trajectory) == 1
    assert trajectory.loc[0, "pb_0"] == 0
    assert trajectory.loc[0, "buffer_size"] == 0


def test_run_online_trajectory(model, bundle):
    p0 = bundle.pb_of("Short/Light")
    trajectory = run_online(
        model,
        bundle,
        tool_state("Long/Heavy"),
        regime="C",
        ticks=8,
        seed=2,
        p0=p0,
        cfg=OnlineConfig(n_thre=3, epochs=2),
        noise=zero,
    )
    assert len(trajectory) == 9
    assert trajectory["tick"].tolist() == list(range(9))
    assert trajectory["time_s"].iloc[-1] == pytest.approx(8 / 5)
    assert (trajectory["regime"] == "C").all()
    assert trajectory.loc[0, ["pb_0", "pb_1"]].tolist() == pytest.approx(p0)
    assert trajectory["buffer_size"].is_monotonic_increasing
    assert trajectory["updated"].any()
    assert not trajectory.loc[trajectory["buffer_size"] < 3, "updated"].any()
    assert not trajectory.loc[~trajectory["collected"], "updated"].any()
    assert "dist_Long/Heavy" in trajectory


def test_run_online_is_seeded(model, bundle):
    kwargs = dict(regime="A", ticks=4, seed=7, cfg=OnlineConfig(n_thre=2))
    first = run_online(model, bundle, tool_state("Short/Middle"), **kwargs)
    second = run_online(model, bundle, tool_state("Short/Middle"), **kwargs)
    assert first.equals(second)


def test_run_online_unknown_regime(model, bundle):
    with pytest.raises(ConfigurationError):
        run_online(model, bundle, tool_state("Long/Heavy"), regime="Z", ticks=1)


@pytest.fixture(scope="module")
def two_tools(trained, small_datasets):
    # Same pose and COG, tip and pixel apart: only the PB tells the tools apart
    # under theta/COG masks.
    light = small_datasets[3].samples[0]
    offset = np.zeros(11)
    offset[6:9] = [0.0, 0.0, -40.0]
    offset[9:] = [0.0, 30.0]
    heavy = StateSample.from_vector(light.to_vector() + offset, tool=tool_state("Short/Heavy"))
    datasets = [
        ToolDataset(tool_state("Short/Heavy"), [heavy], 0),
        ToolDataset(tool_state("Long/Light"), [light], 1),
    ]
    cfg = TrainConfig(
        epochs=1500, batch_size=2, lr=1e-2, hidden=(16, 8, 4, 8, 16), pb_dim=1, seed=0
    )
    bundle, history = train(datasets, cfg, normalizer=trained[0].normalizer)
    return bundle, history, heavy, light


def test_two_tool_bundle_reconstructs_its_samples(two_tools):
    bundle, history, heavy, light = two_tools
    assert history["loss"].iloc[-1] < 1e-2
    mask = reduce_to_feasible(light.present)
    for k, sample in enumerate([heavy, light]):
        target = bundle.normalizer.normalize(sample.to_vector())
        out, _, _ = forward_batch(bundle, [sample.to_vector()], [mask.bits], [bundle.pb[k]])
        assert masked_loss(out[0], target, mask)[0] < 1e-2


def test_update_stays_put_at_own_pb(two_tools):
    bundle, _, _, light = two_tools
    spacing = np.linalg.norm(bundle.pb[1] - bundle.pb[0])
    buffer = _filled_buffer([light] * 5)
    new, updated = update_pb(buffer, bundle, bundle.pb[1], net.MomentumState())
    assert updated
    assert np.linalg.norm(new - bundle.pb[1]) < 0.1 * spacing


def test_update_approaches_pb_of_held_tool(two_tools):
    bundle, _, _, light = two_tools
    buffer = _filled_buffer([light] * 5)
    cfg = OnlineConfig(momentum=0.0)
    state = net.MomentumState(momentum=cfg.momentum)
    p = bundle.pb[0].copy()
    distances = [np.linalg.norm(p - bundle.pb[1])]
    for _ in range(50):
        p, _ = update_pb(buffer, bundle, p, state, cfg)
        distances.append(np.linalg.norm(p - bundle.pb[1]))
    assert np.all(np.diff(distances) <= 1e-12)
    assert distances[-1] < distances[0]


def test_unseen_modality_does_not_move_pb(bundle, small_datasets):
    samples = small_datasets[4].samples[:8]
    shifted = [
        StateSample(s.theta, s.x_cog, s.x_tool, s.s_tool + 80.0, tool=s.tool)
        for s in samples
    ]
    p = np.array([0.1, -0.1])
    results = []
    for entries in [samples, shifted]:
        buffer = _filled_buffer(entries)
        assert {str(e.mask) for e in buffer.entries} == {"1110"}
        results.append(update_pb(buffer, bundle, p, net.MomentumState())[0])
    assert np.array_equal(results[0], results[1])
