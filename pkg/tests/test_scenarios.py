import json

import numpy as np
import pandas as pd
import pytest

from flexbody import (
    SCENARIOS,
    TOOL_STATES,
    ConfigurationError,
    MissingPrerequisiteError,
    Normalizer,
    ScenarioSpec,
    config_hash,
    load_config,
    make_bundle,
    run_scenario,
    save_bundle,
    set_logging_level,
    window_targets,
)

from .conftest import SMALL_CONFIG


def _spec(scenario, out, scenario_dir=None, **kwargs):
    if scenario_dir is not None:
        kwargs.setdefault("sim_bundle", str(scenario_dir / "sim_bundle.npz"))
        kwargs.setdefault("real_bundle", str(scenario_dir / "real_bundle.npz"))
    return ScenarioSpec(scenario, out_dir=str(out), config_path=str(SMALL_CONFIG), **kwargs)


def _summary(out, scenario):
    with open(out / f"{scenario.replace('-', '_')}_summary.json") as file:
        return json.load(file)


def test_scenario_names():
    assert len(SCENARIOS) == 7
    assert ScenarioSpec("pb-map").summary_name == "pb_map_summary.json"


@pytest.mark.parametrize(
    "scenario,seed", [("train-real", 0), ("pb-map", -1), ("pb-map", 1.5)]
)
def test_invalid_scenario_spec(scenario, seed):
    with pytest.raises(ConfigurationError):
        ScenarioSpec(scenario, seed=seed)


def test_bundle_paths_default_to_out_dir():
    spec = ScenarioSpec("control-eval", out_dir="runs/a")
    assert str(spec.sim_bundle_path) == "runs/a/sim_bundle.npz"
    assert str(spec.real_bundle_path) == "runs/a/real_bundle.npz"


@pytest.mark.parametrize(
    "scenario,requires",
    [("pb-map", "train-sim"), ("fine-tune", "train-sim"), ("tool-switch", "fine-tune")],
)
def test_missing_prerequisite(tmp_path, scenario, requires):
    with pytest.raises(MissingPrerequisiteError) as excinfo:
        run_scenario(_spec(scenario, tmp_path))
    assert excinfo.value.requires == requires
    assert excinfo.value.to_dict()["requires"] == requires


def test_control_eval_needs_fine_tuned_bundle(tmp_path, scenario_dir):
    spec = _spec("control-eval", tmp_path, sim_bundle=str(scenario_dir / "sim_bundle.npz"))
    with pytest.raises(MissingPrerequisiteError) as excinfo:
        run_scenario(spec)
    assert excinfo.value.requires == "fine-tune"


def test_train_sim_outputs(scenario_dir):
    summary = _summary(scenario_dir, "train-sim")
    assert summary["scenario"] == "train-sim"
    assert summary["seed"] == 0
    assert summary["config_hash"] == config_hash(load_config(SMALL_CONFIG))
    assert summary["n_samples"] == 120
    assert summary["artifacts"] == [
        "sim_dataset.jl",
        "sim_bundle.npz",
        "train_history.csv",
        "sim_pb_table.csv",
        "train_sim_summary.json",
    ]
    for name in summary["artifacts"]:
        assert (scenario_dir / name).exists()
    history = pd.read_csv(scenario_dir / "train_history.csv")
    assert len(history) == 30
    assert len(pd.read_json(scenario_dir / "sim_dataset.jl", lines=True)) == 120


def test_fine_tune_outputs(scenario_dir):
    summary = _summary(scenario_dir, "fine-tune")
    assert summary["n_samples"] == 48
    assert len(pd.read_csv(scenario_dir / "fine_tune_history.csv")) == 10
    table = pd.read_csv(scenario_dir / "real_pb_table.csv")
    assert table["label"].tolist() == [t.label for t in TOOL_STATES]
    sim_table = pd.read_csv(scenario_dir / "sim_pb_table.csv")
    assert not np.allclose(table[["pb_0", "pb_1"]], sim_table[["pb_0", "pb_1"]])


def test_train_sim_is_reproducible(tmp_path, scenario_dir):
    run_scenario(_spec("train-sim", tmp_path))
    first = (scenario_dir / "train_history.csv").read_bytes()
    second = (tmp_path / "train_history.csv").read_bytes()
    assert first == second
    assert (scenario_dir / "sim_pb_table.csv").read_bytes() == (
        tmp_path / "sim_pb_table.csv"
    ).read_bytes()


def test_pb_map(tmp_path, scenario_dir):
    summary = run_scenario(_spec("pb-map", tmp_path, scenario_dir))
    assert not summary["degenerate"]
    assert summary["eigenvalues"][0] >= summary["eigenvalues"][1]
    pca = pd.read_csv(tmp_path / "pb_pca.csv")
    assert pca.columns.tolist() == ["label", "weight_g", "length_mm", "pc_0", "pc_1"]
    assert len(pca) == 6
    assert pca["pc_0"].mean() == pytest.approx(0.0, abs=1e-9)
    assert (tmp_path / "pb_map_summary.json").exists()


def test_pb_map_of_untrained_bundle(tmp_path):
    bundle = make_bundle(
        TOOL_STATES, Normalizer(np.zeros(11), np.ones(11)), hidden=(8, 4, 8), rng=0
    )
    save_bundle(bundle, tmp_path / "untrained.npz")
    spec = _spec("pb-map", tmp_path, sim_bundle=str(tmp_path / "untrained.npz"))
    summary = run_scenario(spec)
    assert summary["degenerate"]
    assert not pd.read_csv(tmp_path / "pb_pca.csv")[["pc_0", "pc_1"]].to_numpy().any()


def test_online_traj(tmp_path, scenario_dir):
    spec = _spec("online-traj", tmp_path, sim_bundle=str(scenario_dir / "sim_bundle.npz"))
    summary = run_scenario(spec)
    assert summary["plant"] == "simulation"
    assert len(summary["mean_distance_to_true_pb"]) == 9
    df = pd.read_csv(tmp_path / "online_trajectories.csv")
    assert len(df) == 3 * 3 * 9
    assert set(df["regime"]) == {"A", "B", "C"}
    assert (df["dist_true"] >= 0).all()
    start = df[(df["case"] == "Short/Middle to Long/Middle") & (df["tick"] == 0)]
    assert (start["dist_Short/Middle"] == 0).all()


def test_control_eval(tmp_path, scenario_dir):
    summary = run_scenario(_spec("control-eval", tmp_path, scenario_dir))
    assert summary["tool"] == "Long/Middle"
    errors = pd.read_csv(tmp_path / "control_errors.csv")
    assert len(errors) == 5
    for column in ["geometric_mm", "sim_trained_mm", "fine_tuned_mm"]:
        assert column in errors
    log = pd.read_csv(tmp_path / "control_log.csv")
    assert set(log["method"]) == {"geometric", "sim_trained", "fine_tuned"}
    trained = log[log["method"] == "fine_tuned"]
    assert len(trained) == 5 * 5
    for _, group in trained.groupby("target"):
        assert group["best_loss"].is_monotonic_decreasing


def test_tool_switch(tmp_path, scenario_dir):
    summary = run_scenario(_spec("tool-switch", tmp_path, scenario_dir))
    assert summary["n_max"] == 5
    phases = summary["phases"]
    assert [p["phase"] for p in phases] == [0, 1, 2]
    assert [p["tool_label"] for p in phases] == ["Long/Light", "Long/Heavy", "Short/Heavy"]
    df = pd.read_csv(tmp_path / "tool_switch_metrics.csv")
    assert len(df) == 12
    assert df["step"].tolist() == list(range(12))
    assert df["phase"].tolist() == [0] * 4 + [1] * 4 + [2] * 4
    for column in ["control_error_ma_mm", "cog_error_ma_mm", "pb_0", "dist_Long/Heavy"]:
        assert column in df


def test_tool_switch_keeps_repeated_tools_apart(tmp_path, scenario_dir):
    with open(SMALL_CONFIG) as file:
        config = json.load(file)
    config["scenarios"]["tool_switch_sequence"] = ["Long/Light", "Long/Heavy", "Long/Light"]
    config_path = tmp_path / "repeat.json"
    config_path.write_text(json.dumps(config))
    spec = ScenarioSpec(
        "tool-switch",
        out_dir=str(tmp_path),
        config_path=str(config_path),
        real_bundle=str(scenario_dir / "real_bundle.npz"),
    )
    phases = run_scenario(spec)["phases"]
    assert len(phases) == 3
    assert [p["tool_label"] for p in phases] == ["Long/Light", "Long/Heavy", "Long/Light"]
    df = pd.read_csv(tmp_path / "tool_switch_metrics.csv")
    assert not df.loc[~df["collected"], "updated"].any()


def test_window_targets_approach_then_push():
    targets = window_targets([380.0, 0.0, 380.0], -60.0, 80.0)
    assert targets.tolist() == [[380.0, -60.0, 380.0], [380.0, 20.0, 380.0]]
    assert targets[1] - targets[0] == pytest.approx([0.0, 80.0, 0.0])
    scenarios = load_config()["scenarios"]
    assert scenarios["window_approach_y_mm"] == -60.0
    assert scenarios["window_push_y_mm"] == 80.0


def test_window_task(tmp_path, scenario_dir):
    summary = run_scenario(_spec("window-task", tmp_path, scenario_dir))
    assert summary["tool"] == "Long/Light"
    trajectory = pd.read_csv(tmp_path / "window_task_pb.csv")
    assert len(trajectory) == 7
    assert (trajectory["regime"] == "B").all()
    control = pd.read_csv(tmp_path / "window_task_control.csv")
    assert len(control) == 4
    assert control["method"].tolist() == ["start_pb", "adapted_pb"] * 2
    assert summary["final_pb"] == pytest.approx(
        trajectory[["pb_0", "pb_1"]].iloc[-1].tolist()
    )


def test_set_logging_level():
    with pytest.raises(ValueError):
        set_logging_level("LOUD")
    set_logging_level("WARNING")
