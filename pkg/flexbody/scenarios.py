"""
.. _scenarios:

Running the Experiments
=======================

Each experiment is a *scenario*: a named protocol that reads a config, runs
with a fixed seed, and writes CSV files plus a summary file named after the
scenario (``train_sim_summary.json``, ``pb_map_summary.json`` and so on) into
an output directory. Scenarios build on each other through the bundle files
they leave behind:

.. code-block:: text

    train-sim ──> sim_bundle.npz ──┬──> pb-map
                                   ├──> online-traj
                                   └──> fine-tune ──> real_bundle.npz ──┬──> control-eval
                                                                        ├──> tool-switch
                                                                        └──> window-task

============  ===============================================  =====================================
scenario      what it does                                     files
============  ===============================================  =====================================
train-sim     collect 500 samples per tool on the simulator    sim_dataset.jl, sim_bundle.npz,
              and train weights and PBs                        train_history.csv, sim_pb_table.csv
fine-tune     collect ~80 curated samples per tool on the      real_dataset.jl, real_bundle.npz,
              surrogate-real plant, retrain from zero PBs      fine_tune_history.csv,
                                                               real_pb_table.csv
pb-map        PB table of the simulation bundle and its        pb_table.csv, pb_pca.csv
              principal components
online-traj   online PB estimation under sensor regimes        online_trajectories.csv
              A, B and C over several seeds
control-eval  reach five targets with geometric IK, the        control_errors.csv, control_log.csv
              simulation bundle and the fine-tuned bundle
tool-switch   reach random targets while the tool changes,     tool_switch_metrics.csv
              estimating the PB online
window-task   recognize the tool online, then push a window    window_task_pb.csv,
              sash                                             window_task_control.csv
============  ===============================================  =====================================

Every summary holds the scenario name, the seed, the SHA-256 hash of
the config and the list of files written.

>>> import flexbody as fb
>>> fb.run_scenario(fb.ScenarioSpec("train-sim", out_dir="runs/a", seed=0))
>>> fb.run_scenario(fb.ScenarioSpec("pb-map", out_dir="runs/a", seed=0))

The same from the command line::

    flexbody train-sim --out runs/a --seed 0
    flexbody pb-map --out runs/a --seed 0
"""

__all__ = [
    "FLEXBODY_LOG_FMT",
    "SCENARIOS",
    "ScenarioSpec",
    "run_scenario",
    "set_logging_level",
    "window_targets",
]

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

import flexbody
from flexbody._errors import (
    ConfigurationError,
    InstabilityError,
    IterationLimitError,
    MissingPrerequisiteError,
    RangeViolationError,
)
from flexbody.analysis import metric_series, pb_alignment, pca2
from flexbody.config import config_hash, load_config
from flexbody.controller import (
    ControlConfig,
    ControlTarget,
    execute,
    geometric_ik,
    solve,
)
from flexbody.net import MomentumState
from flexbody.online import (
    REGIMES,
    OnlineBuffer,
    OnlineConfig,
    maybe_collect,
    pb_distances,
    run_online,
    update_pb,
)
from flexbody.sim import (
    TOOL_STATES,
    NoiseSpec,
    PerturbSpec,
    RobotModel,
    center_of_gravity,
    forward_kinematics,
    observe,
    rigid_model,
    surrogate_real,
    tool_state,
)
from flexbody.trainer import (
    TrainConfig,
    collect_dataset,
    pb_table,
    save_dataset,
    train,
)
from flexbody.wtnpb import load_bundle, save_bundle

FLEXBODY_LOG_FMT = (
    "%(asctime)s | %(levelname)s | %(filename)s:%(lineno)d "
    "| %(funcName)s | %(message)s"
)
logging.basicConfig(format=FLEXBODY_LOG_FMT)

SCENARIOS = (
    "train-sim",
    "fine-tune",
    "pb-map",
    "online-traj",
    "control-eval",
    "tool-switch",
    "window-task",
)

_EXECUTION_ERRORS = (InstabilityError, RangeViolationError, IterationLimitError)


def set_logging_level(level_or_name):
    """Change the logging level during the session.
    Acceptable values are [0, 10, 20, 30, 40, 50,
    'NOTSET', 'DEBUG', 'INFO', 'WARNING', 'ERROR',
    'CRITICAL']
    """
    lvl_names_values = [
        0,
        10,
        20,
        30,
        40,
        50,
        "NOTSET",
        "DEBUG",
        "INFO",
        "WARNING",
        "ERROR",
        "CRITICAL",
    ]
    if level_or_name not in lvl_names_values:
        raise ValueError(f"Please make sure you supply a value from: {lvl_names_values}")
    logging.getLogger().setLevel(level_or_name)


@dataclass(frozen=True)
class ScenarioSpec:
    """What to run, with which seed and config, and where the files go.

    `sim_bundle` and `real_bundle` default to ``sim_bundle.npz`` and
    ``real_bundle.npz`` inside `out_dir`.
    """

    scenario: str
    out_dir: str = "."
    seed: int = 0
    config_path: str = None
    sim_bundle: str = None
    real_bundle: str = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(
                f"unknown scenario {self.scenario!r}, use one of {list(SCENARIOS)}",
                scenario=self.scenario,
            )
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer", seed=self.seed)

    @property
    def out(self):
        return Path(self.out_dir)

    @property
    def sim_bundle_path(self):
        return Path(self.sim_bundle) if self.sim_bundle else self.out / "sim_bundle.npz"

    @property
    def real_bundle_path(self):
        return Path(self.real_bundle) if self.real_bundle else self.out / "real_bundle.npz"

    @property
    def summary_name(self):
        return f"{self.scenario.replace('-', '_')}_summary.json"


@dataclass
class _Run:
    spec: ScenarioSpec
    config: dict
    model: RobotModel
    real: RobotModel
    noise: NoiseSpec

    @property
    def seed(self):
        return int(self.spec.seed)

    @property
    def settings(self):
        return self.config["scenarios"]

    def path(self, name):
        return self.spec.out / name


def _require_bundle(path, requires):
    if not Path(path).exists():
        raise MissingPrerequisiteError(
            f"{path} not found, run `flexbody {requires}` first",
            requires=requires,
            path=str(path),
        )
    return load_bundle(path)


def _write_csv(run, df, name):
    df.to_csv(run.path(name), index=False)
    logging.info(msg=f"wrote {run.path(name)}")
    return name


def _realize(plant, theta_cmd, tool, target):
    """Errors of the pose `plant` actually reaches, NaN when it cannot."""
    try:
        realized = execute(plant, theta_cmd, tool)
    except _EXECUTION_ERRORS as e:
        logging.warning(msg=f"execution failed: {e}")
        nan = np.full(3, np.nan)
        return {
            "x_tool": nan,
            "x_cog": nan[:2],
            "tip_error_mm": np.nan,
            "cog_error_mm": np.nan,
        }
    return {
        "x_tool": realized["x_tool"],
        "x_cog": realized["x_cog"],
        "tip_error_mm": float(np.linalg.norm(realized["x_tool"] - target.x_tool_ref)),
        "cog_error_mm": float(np.linalg.norm(realized["x_cog"] - target.x_cog_ref)),
    }


def _train_sim(run):
    collect = run.config["collect"]
    datasets = [
        collect_dataset(
            run.model,
            tool,
            collect["n_per_tool"],
            policy="random",
            seed=run.seed * 1000 + k,
            noise=run.noise,
            margin_mm=collect["margin_mm"],
            k=k,
        )
        for k, tool in enumerate(TOOL_STATES)
    ]
    save_dataset(datasets, run.path("sim_dataset.jl"))
    bundle, history = train(datasets, TrainConfig.from_config(run.config, "train", run.seed))
    save_bundle(bundle, run.path("sim_bundle.npz"))
    table = pb_table(bundle)
    artifacts = [
        "sim_dataset.jl",
        "sim_bundle.npz",
        _write_csv(run, history, "train_history.csv"),
        _write_csv(run, table, "sim_pb_table.csv"),
    ]
    metrics = {
        "n_samples": int(sum(len(d) for d in datasets)),
        "final_loss": float(history["loss"].iloc[-1]) if len(history) else None,
        "pb_alignment": pb_alignment(table),
    }
    return metrics, artifacts


def _fine_tune(run):
    sim = _require_bundle(run.spec.sim_bundle_path, "train-sim")
    collect = run.config["collect"]
    n = collect["curated_per_tool"] + collect["random_per_tool"]
    datasets = [
        collect_dataset(
            run.model,
            tool,
            n,
            policy="curated",
            seed=run.seed * 1000 + k,
            plant=run.real,
            noise=run.noise,
            margin_mm=collect["margin_mm"],
            curated=collect["curated_per_tool"],
            grid=collect.get("curated_grid_deg"),
            k=k,
        )
        for k, tool in enumerate(sim.tools)
    ]
    save_dataset(datasets, run.path("real_dataset.jl"))
    cfg = TrainConfig.from_config(run.config, "fine_tune", run.seed)
    bundle, history = train(datasets, cfg, init=sim)
    save_bundle(bundle, run.path("real_bundle.npz"))
    table = pb_table(bundle)
    artifacts = [
        "real_dataset.jl",
        "real_bundle.npz",
        _write_csv(run, history, "fine_tune_history.csv"),
        _write_csv(run, table, "real_pb_table.csv"),
    ]
    metrics = {
        "n_samples": int(sum(len(d) for d in datasets)),
        "final_loss": float(history["loss"].iloc[-1]) if len(history) else None,
        "pb_alignment": pb_alignment(table),
    }
    return metrics, artifacts


def _pb_map(run):
    bundle = _require_bundle(run.spec.sim_bundle_path, "train-sim")
    table = pb_table(bundle)
    result = pca2(bundle.pb)
    if result.degenerate:
        logging.warning(msg="all PBs are identical, was the bundle trained?")
    pca = table[["label", "weight_g", "length_mm"]].copy()
    for i in range(result.projected.shape[1]):
        pca[f"pc_{i}"] = result.projected[:, i]
    artifacts = [_write_csv(run, table, "pb_table.csv"), _write_csv(run, pca, "pb_pca.csv")]
    metrics = {
        "degenerate": result.degenerate,
        "eigenvalues": result.eigenvalues.tolist(),
        "components": result.components.tolist(),
        "pb_alignment": pb_alignment(table),
    }
    return metrics, artifacts


def _online_traj(run):
    if run.spec.real_bundle:
        bundle, plant = _require_bundle(run.spec.real_bundle_path, "fine-tune"), run.real
    else:
        bundle, plant = _require_bundle(run.spec.sim_bundle_path, "train-sim"), run.model
    cfg = OnlineConfig.from_config(run.config)
    cases = [
        ("Long/Light from zero", "Long/Light", None),
        ("Short/Heavy from zero", "Short/Heavy", None),
        ("Short/Middle to Long/Middle", "Long/Middle", "Short/Middle"),
    ]
    frames, finals = [], []
    for case, label, start in cases:
        tool = tool_state(label)
        p0 = None if start is None else bundle.pb_of(start)
        for regime in REGIMES:
            for offset in run.settings["online_seeds"]:
                seed = run.seed + offset
                df = run_online(
                    plant,
                    bundle,
                    tool,
                    regime=regime,
                    ticks=run.settings["online_ticks"],
                    seed=seed,
                    p0=p0,
                    cfg=cfg,
                    noise=run.noise,
                    check_model=run.model,
                    margin_mm=run.config["collect"]["margin_mm"],
                )
                df.insert(0, "case", case)
                df.insert(1, "tool_label", tool.label)
                df.insert(2, "seed", seed)
                df["dist_true"] = df[f"dist_{tool.label}"]
                frames.append(df)
                finals.append(
                    {
                        "case": case,
                        "regime": regime,
                        "initial": df["dist_true"].iloc[0],
                        "final": df["dist_true"].iloc[-1],
                    }
                )
    trajectories = pd.concat(frames, ignore_index=True)
    means = pd.DataFrame(finals).groupby(["case", "regime"])[["initial", "final"]].mean()
    metrics = {
        "plant": "surrogate-real" if run.spec.real_bundle else "simulation",
        "mean_distance_to_true_pb": {
            f"{case} | {regime}": {k: float(v) for k, v in row.items()}
            for (case, regime), row in means.iterrows()
        },
    }
    return metrics, [_write_csv(run, trajectories, "online_trajectories.csv")]


def _solve_log(result, realized, target_k, method):
    rows = []
    for epoch, loss in enumerate(result.loss_trace, start=1):
        rows.append({"target": target_k, "method": method, "epoch": epoch, "best_loss": loss})
    if not rows:
        rows.append(
            {"target": target_k, "method": method, "epoch": 0, "best_loss": result.initial_loss}
        )
    for row in rows:
        row.update(_pose_columns(result.prediction[6:9], result.prediction[4:6], realized))
    return rows


def _pose_columns(tip_pred, cog_pred, realized):
    columns = {}
    for name, values in [
        ("pred_tip", tip_pred),
        ("pred_cog", cog_pred),
        ("real_tip", realized["x_tool"]),
        ("real_cog", realized["x_cog"]),
    ]:
        for axis, value in zip("xyz", values):
            columns[f"{name}_{axis}_mm"] = float(value)
    return columns


def _control_eval(run):
    sim = _require_bundle(run.spec.sim_bundle_path, "train-sim")
    real = _require_bundle(run.spec.real_bundle_path, "fine-tune")
    tool = tool_state(run.settings["control_tool"])
    ccfg = ControlConfig.from_config(run.config)
    errors, log = [], []
    for k, ref in enumerate(run.settings["control_targets_mm"]):
        target = ControlTarget(x_tool_ref=ref)
        row = {"target": k, "x_ref_mm": ref[0], "y_ref_mm": ref[1], "z_ref_mm": ref[2]}
        theta, info = geometric_ik(
            run.model, target, tool, theta0=run.settings["ik_initial_pose_deg"]
        )
        realized = _realize(run.real, theta, tool, target)
        row["geometric_mm"] = realized["tip_error_mm"]
        entry = {"target": k, "method": "geometric", "epoch": info["iterations"]}
        entry["best_loss"] = info["tip_error_mm"]
        rigid = rigid_model(run.model)
        entry.update(
            _pose_columns(
                forward_kinematics(rigid, theta, tool),
                center_of_gravity(rigid, theta, tool),
                realized,
            )
        )
        log.append(entry)
        for method, bundle in [("sim_trained", sim), ("fine_tuned", real)]:
            result = solve(bundle, target, bundle.pb_of(tool), ccfg, model=run.model)
            realized = _realize(run.real, result.theta_cmd, tool, target)
            row[f"{method}_mm"] = realized["tip_error_mm"]
            log.extend(_solve_log(result, realized, k, method))
        errors.append(row)
    errors = pd.DataFrame(errors)
    means = errors[["geometric_mm", "sim_trained_mm", "fine_tuned_mm"]].mean()
    metrics = {
        "tool": tool.label,
        "mean_tip_error_mm": {k: float(v) for k, v in means.items()},
        "std_tip_error_mm": {
            k: float(v)
            for k, v in errors[["geometric_mm", "sim_trained_mm", "fine_tuned_mm"]]
            .std()
            .items()
        },
    }
    artifacts = [
        _write_csv(run, errors, "control_errors.csv"),
        _write_csv(run, pd.DataFrame(log), "control_log.csv"),
    ]
    return metrics, artifacts


def _tool_switch(run):
    bundle = _require_bundle(run.spec.real_bundle_path, "fine-tune")
    settings = run.settings
    sequence = [tool_state(label) for label in settings["tool_switch_sequence"]]
    n_max = settings["tool_switch_n_max"]
    base = OnlineConfig.from_config(run.config)
    ocfg = OnlineConfig.from_config(run.config, n_max=n_max, n_thre=min(base.n_thre, n_max))
    ccfg = ControlConfig.from_config(run.config)
    box = np.asarray(settings["target_box_mm"], dtype=float)
    rng = np.random.default_rng(run.seed)
    p = bundle.pb_of(sequence[0])
    state = MomentumState(momentum=ocfg.momentum)
    buffer = OnlineBuffer(ocfg.n_max, ocfg.thresholds, bundle.masks)
    rows = []
    for phase, tool in enumerate(sequence):
        for _ in range(settings["tool_switch_steps_per_phase"]):
            target = ControlTarget(x_tool_ref=rng.uniform(box[:, 0], box[:, 1]))
            result = solve(bundle, target, p, ccfg, model=run.model)
            realized = _realize(run.real, result.theta_cmd, tool, target)
            collected = updated = False
            try:
                sample = observe(run.real, result.theta_cmd, tool, run.noise, rng)
            except _EXECUTION_ERRORS:
                sample = None
            if sample is not None:
                collected = maybe_collect(buffer, sample)
            if collected:
                p, updated = update_pb(buffer, bundle, p, state, ocfg)
            row = {"phase": phase, "tool_label": tool.label}
            row.update(
                control_error_mm=realized["tip_error_mm"],
                cog_error_mm=realized["cog_error_mm"],
                collected=collected,
                updated=updated,
            )
            row.update({f"pb_{i}": float(v) for i, v in enumerate(p)})
            row.update(pb_distances(bundle, p))
            rows.append(row)
    df = pd.DataFrame(rows)
    series = metric_series(df["control_error_mm"], df["cog_error_mm"])
    df = pd.concat([series, df.drop(columns=["control_error_mm", "cog_error_mm"])], axis=1)
    phases = []
    for phase, group in df.groupby("phase"):
        phases.append(
            {
                "phase": int(phase),
                "tool_label": sequence[phase].label,
                "cog_error_ma_at_swap_mm": float(group["cog_error_ma_mm"].iloc[0]),
                "cog_error_ma_end_mm": float(group["cog_error_ma_mm"].iloc[-1]),
                "control_error_ma_at_swap_mm": float(group["control_error_ma_mm"].iloc[0]),
                "control_error_ma_end_mm": float(group["control_error_ma_mm"].iloc[-1]),
            }
        )
    metrics = {"n_max": n_max, "phases": phases}
    return metrics, [_write_csv(run, df, "tool_switch_metrics.csv")]


def window_targets(sash_mm, approach_y_mm=-60.0, push_y_mm=80.0):
    """Approach and push points of the window sash.

    The tip first reaches `approach_y_mm` to the side of the sash, then moves
    `push_y_mm` along y from there.

    >>> window_targets([380, 0, 380]).tolist()
    [[380.0, -60.0, 380.0], [380.0, 20.0, 380.0]]
    """
    approach = np.array(sash_mm, dtype=float) + [0.0, approach_y_mm, 0.0]
    return np.vstack([approach, approach + [0.0, push_y_mm, 0.0]])


def _window_task(run):
    bundle = _require_bundle(run.spec.real_bundle_path, "fine-tune")
    settings = run.settings
    tool = tool_state(settings["window_tool"])
    start = bundle.pb_of(settings["window_start_pb"])
    trajectory = run_online(
        run.real,
        bundle,
        tool,
        regime="B",
        ticks=settings["window_explore_ticks"],
        seed=run.seed,
        p0=start,
        cfg=OnlineConfig.from_config(run.config),
        noise=run.noise,
        check_model=run.model,
        margin_mm=run.config["collect"]["margin_mm"],
    )
    pb_cols = [c for c in trajectory.columns if c.startswith("pb_")]
    adapted = trajectory[pb_cols].iloc[-1].to_numpy(dtype=float)
    ccfg = ControlConfig.from_config(run.config)
    rows = []
    targets = window_targets(
        settings["window_sash_mm"],
        settings["window_approach_y_mm"],
        settings["window_push_y_mm"],
    )
    for k, ref in enumerate(targets):
        target = ControlTarget(x_tool_ref=ref)
        for method, p in [("start_pb", start), ("adapted_pb", adapted)]:
            result = solve(bundle, target, p, ccfg, model=run.model)
            realized = _realize(run.real, result.theta_cmd, tool, target)
            row = {"target": k, "method": method}
            row.update({f"theta_{i}_deg": float(v) for i, v in enumerate(result.theta_cmd)})
            row.update(_pose_columns(result.prediction[6:9], result.prediction[4:6], realized))
            row.update(
                tip_error_mm=realized["tip_error_mm"], cog_error_mm=realized["cog_error_mm"]
            )
            rows.append(row)
    control = pd.DataFrame(rows)
    metrics = {
        "tool": tool.label,
        "start_pb": settings["window_start_pb"],
        "final_pb": adapted.tolist(),
        "final_distance_to_true_pb": float(trajectory[f"dist_{tool.label}"].iloc[-1]),
        "mean_tip_error_mm": {
            m: float(v) for m, v in control.groupby("method")["tip_error_mm"].mean().items()
        },
    }
    artifacts = [
        _write_csv(run, trajectory, "window_task_pb.csv"),
        _write_csv(run, control, "window_task_control.csv"),
    ]
    return metrics, artifacts


_RUNNERS = {
    "train-sim": _train_sim,
    "fine-tune": _fine_tune,
    "pb-map": _pb_map,
    "online-traj": _online_traj,
    "control-eval": _control_eval,
    "tool-switch": _tool_switch,
    "window-task": _window_task,
}


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return str(obj)


def run_scenario(spec):
    """Run the scenario described by `spec` and write its files.

    Parameters
    ----------
    spec : ScenarioSpec
      Scenario name, seed, config file, output directory and bundle paths.

    Returns
    -------
    summary : dict
      The content written to ``<scenario>_summary.json``.

    Raises
    ------
    MissingPrerequisiteError
      When a bundle the scenario needs does not exist; ``requires`` names the
      scenario that produces it.
    ConfigurationError
      For an invalid config or spec.
    """
    config = load_config(spec.config_path)
    spec.out.mkdir(parents=True, exist_ok=True)
    model = RobotModel.from_config(config)
    run = _Run(
        spec=spec,
        config=config,
        model=model,
        real=surrogate_real(model, PerturbSpec.from_config(config)),
        noise=NoiseSpec.from_config(config),
    )
    logging.info(msg=f"running {spec.scenario} with seed {spec.seed} into {spec.out}")
    metrics, artifacts = _RUNNERS[spec.scenario](run)
    summary = {
        "scenario": spec.scenario,
        "seed": run.seed,
        "config_hash": config_hash(config),
        "flexbody_version": flexbody.__version__,
        **metrics,
        "artifacts": artifacts + [spec.summary_name],
    }
    with open(run.path(spec.summary_name), "w") as file:
        json.dump(summary, file, indent=2, default=_jsonable)
    logging.info(msg=f"finished {spec.scenario}, summary in {run.path(spec.summary_name)}")
    return summary
