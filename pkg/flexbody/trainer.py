"""
.. _trainer:

Collecting Data and Training the Network
========================================

Training happens in two stages, mirroring how a physical robot would be
taught:

1. **Simulation stage**: for each of the six tool states, 500 random poses are
   sampled on the nominal simulator, keeping only those where the robot stays
   safely balanced (COG at least 10 mm inside the support polygon) and the tool
   tip is in view of the camera. The network weights and one parametric bias
   per tool are trained jointly on the 3000 samples.
2. **Fine-tuning stage**: the weights are kept, every parametric bias is reset
   to zero, and training continues on a much smaller dataset taken from the
   surrogate-real plant: 60 poses from a fixed "curated" grid plus 20 random
   ones per tool, about 480 samples.

TL;DR

>>> import flexbody as fb
>>> config = fb.load_config()
>>> model = fb.RobotModel.from_config(config)
>>> datasets = [
...     fb.collect_dataset(model, tool, n=500, seed=k, k=k)
...     for k, tool in enumerate(fb.TOOL_STATES)
... ]
>>> fb.save_dataset(datasets, "sim_dataset.jl")
>>> bundle, history = fb.train(datasets, fb.TrainConfig(epochs=2000))
>>> fb.pb_table(bundle)

====  ============  ==========  ===========  ========  ========
  ..  label           weight_g    length_mm      pb_0      pb_1
====  ============  ==========  ===========  ========  ========
   0  Short/Light           40          176     -0.41      0.52
   1  Short/Middle          80          176     -0.08      0.47
   2  Short/Heavy          120          176      0.29      0.44
   3  Long/Light            40          236     -0.46     -0.31
   4  Long/Middle           80          236     -0.06     -0.36
   5  Long/Heavy           120          236      0.33     -0.42
====  ============  ==========  ===========  ========  ========

(The PB values above are illustrative; yours depend on the seed.)

Every minibatch element gets its own mask drawn uniformly from the feasible
set, the loss always covers all 11 outputs, and the PB of each tool is only
touched by samples of that tool.

Datasets are stored as JSON lines, one sample per line, and can be converted to
parquet with :func:`dataset_to_parquet`.
"""

__all__ = [
    "DEFAULT_CURATED_GRID",
    "ToolDataset",
    "TrainConfig",
    "collect_dataset",
    "dataset_to_parquet",
    "init_fine_tune",
    "is_acceptable",
    "load_dataset",
    "pb_table",
    "sample_pose",
    "save_dataset",
    "train",
]

import logging
from dataclasses import dataclass
from itertools import product

import numpy as np
import pandas as pd

from flexbody import net
from flexbody._errors import (
    ConfigurationError,
    InstabilityError,
    IterationLimitError,
)
from flexbody.sim import (
    JOINT_NAMES,
    MODALITIES,
    ToolState,
    center_of_gravity,
    cog_is_supported,
    deflected_angles,
    forward_kinematics,
    frame_to_samples,
    observe,
    project_to_screen,
    samples_to_frame,
)
from flexbody.wtnpb import (
    DEFAULT_FEASIBLE_MASKS,
    FULL_MASK,
    ModalityMask,
    Normalizer,
    forward_batch,
    make_bundle,
    masked_loss,
)

DEFAULT_CURATED_GRID = {
    "shoulder-pitch": [30.0, 50.0, 70.0, 90.0, 110.0],
    "shoulder-yaw": [-20.0, 0.0, 20.0],
    "elbow-pitch": [20.0, 45.0, 70.0, 95.0],
    "ankle-pitch": [-12.0, -8.0, -4.0, 0.0],
}


@dataclass
class ToolDataset:
    tool: ToolState
    samples: list
    k: int = 0

    def __len__(self):
        return len(self.samples)

    def to_matrix(self):
        if not self.samples:
            return np.empty((0, 11))
        return np.vstack([s.to_vector() for s in self.samples])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    hidden: tuple = (200, 50, 8, 50, 200)
    pb_dim: int = 2
    masks: tuple = DEFAULT_FEASIBLE_MASKS
    fine_tune: bool = False
    log_every: int = 100

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.pb_dim <= 0:
            raise ConfigurationError("epochs, batch_size and pb_dim must be positive")
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be > 0")
        if not self.masks:
            raise ConfigurationError("the feasible mask set is empty")

    @classmethod
    def from_config(cls, config, stage="train", seed=0):
        """Training settings of `stage` ("train" or "fine_tune") from a full config."""
        section = dict(config.get("train", {}))
        if stage == "fine_tune":
            section.update(config.get("fine_tune", {}))
        masks = section.pop("masks", None)
        kwargs = {
            key: val
            for key, val in section.items()
            if key in ("epochs", "batch_size", "lr", "pb_dim", "log_every")
        }
        if "hidden" in section:
            kwargs["hidden"] = tuple(section["hidden"])
        if masks is not None:
            kwargs["masks"] = tuple(ModalityMask.from_string(m) for m in masks)
        return cls(seed=seed, fine_tune=stage == "fine_tune", **kwargs)


def sample_pose(model, rng):
    """Joint angles drawn uniformly within the joint ranges."""
    ranges = model.joint_ranges
    return rng.uniform(ranges[:, 0], ranges[:, 1])


def is_acceptable(model, theta_cmd, tool, margin_mm=10.0):
    """Whether commanding `theta_cmd` is safe and keeps the tool tip in view.

    Safe means the deflected COG stays `margin_mm` inside the support polygon
    and the tip stays above the ground.
    """
    try:
        theta_act = deflected_angles(model, theta_cmd, tool)
    except IterationLimitError:
        return False
    if not cog_is_supported(model, center_of_gravity(model, theta_act, tool), margin_mm):
        return False
    tip = forward_kinematics(model, theta_act, tool)
    if tip[2] <= 0:
        return False
    return project_to_screen(model, tip, ankle_deg=theta_act[3])[1]


def _observe_complete(plant, theta, tool, noise, rng):
    try:
        sample = observe(plant, theta, tool, noise=noise, rng=rng)
    except (InstabilityError, IterationLimitError):
        return None
    return sample if all(sample.present) else None


def _random_samples(model, plant, tool, n, rng, noise, margin_mm):
    samples, attempts = [], 0
    while len(samples) < n:
        attempts += 1
        if attempts >= 1000 and len(samples) < 0.01 * attempts:
            raise ConfigurationError(
                f"acceptance rate below 1% for {tool.label} "
                f"({len(samples)} of {attempts} poses), check the robot config",
                accepted=len(samples),
                attempts=attempts,
            )
        theta = sample_pose(model, rng)
        if not is_acceptable(model, theta, tool, margin_mm):
            continue
        sample = _observe_complete(plant, theta, tool, noise, rng)
        if sample is not None:
            samples.append(sample)
    return samples, attempts


def _curated_poses(model, tool, n, grid, margin_mm):
    ranges = model.joint_ranges
    poses = [np.array(p, dtype=float) for p in product(*(grid[j] for j in JOINT_NAMES))]
    poses = [
        p
        for p in poses
        if np.all(p >= ranges[:, 0])
        and np.all(p <= ranges[:, 1])
        and is_acceptable(model, p, tool, margin_mm)
    ]
    if len(poses) <= n:
        if len(poses) < n:
            logging.warning(
                msg=f"only {len(poses)} curated poses are acceptable for {tool.label}"
            )
        return poses
    picks = np.linspace(0, len(poses) - 1, n).round().astype(int)
    return [poses[i] for i in picks]


def collect_dataset(
    model,
    tool,
    n,
    policy="random",
    seed=0,
    plant=None,
    noise=None,
    margin_mm=10.0,
    curated=60,
    grid=None,
    k=0,
):
    """Collect `n` complete observations of `tool` at safe, visible poses.

    Parameters
    ----------
    model : RobotModel
      The model the safety and visibility constraints are checked on.
    tool : ToolState
      The grasped tool.
    n : int
      Number of samples.
    policy : str
      "random" for rejection-sampled poses, "curated" for up to `curated` poses
      from a fixed grid topped up with random ones.
    seed : int
      Seed for poses and sensor noise.
    plant : RobotModel, optional
      Where the observations come from, `model` by default. Poses that
      destabilize the plant or lose the tip from view are skipped.
    noise : NoiseSpec, optional
      Sensor noise.
    margin_mm : float
      Safety margin inside the support polygon.
    curated : int
      Number of grid poses for the curated policy.
    grid : dict, optional
      Joint name to list of angles, :data:`DEFAULT_CURATED_GRID` by default.
    k : int
      Index of the tool in the training set.

    Returns
    -------
    dataset : ToolDataset
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if policy not in ("random", "curated"):
        raise ValueError(f"unknown policy {policy!r}, use 'random' or 'curated'")
    rng = np.random.default_rng(seed)
    plant = model if plant is None else plant
    samples = []
    if policy == "curated" and n > 0:
        poses = _curated_poses(
            model, tool, min(curated, n), grid or DEFAULT_CURATED_GRID, margin_mm
        )
        for pose in poses:
            sample = _observe_complete(plant, pose, tool, noise, rng)
            if sample is not None:
                samples.append(sample)
    extra, attempts = _random_samples(
        model, plant, tool, n - len(samples), rng, noise, margin_mm
    )
    samples.extend(extra)
    logging.info(
        msg=f"collected {len(samples)} samples for {tool.label} ({policy}, "
        f"{attempts} random attempts)"
    )
    return ToolDataset(tool, samples, k)


def init_fine_tune(bundle, tools):
    """Keep the weights and normalizer of `bundle`, one zero PB per tool in `tools`."""
    tuned = bundle.copy()
    tuned.tools = tuple(tools)
    tuned.pb = np.zeros((len(tools), bundle.pb_dim))
    return tuned


def train(datasets, cfg=None, init=None, normalizer=None):
    """Train weights and parametric biases on one dataset per tool.

    Parameters
    ----------
    datasets : list of ToolDataset
      One dataset per tool state; the list position is the tool index.
    cfg : TrainConfig, optional
      Training settings.
    init : ModelBundle, optional
      Starting point. Required when ``cfg.fine_tune`` is set, in which case
      its weights and normalizer are kept and all PBs start at zero.
    normalizer : Normalizer, optional
      A fixed normalizer instead of one fit on the data.

    Returns
    -------
    bundle : ModelBundle
      The trained network.
    history : pandas.DataFrame
      Per-epoch mean training loss and mask draw counts.
    """
    cfg = TrainConfig() if cfg is None else cfg
    if not datasets:
        raise ValueError("need at least one dataset")
    if cfg.fine_tune and init is None:
        raise ConfigurationError("fine-tuning needs an initial bundle")
    X = np.vstack([d.to_matrix() for d in datasets])
    tool_idx = np.concatenate(
        [np.full(len(d), k, dtype=int) for k, d in enumerate(datasets)]
    )
    complete = [all(s.present) for d in datasets for s in d.samples]
    if not all(complete):
        raise ValueError("training samples must have every modality present")
    tools = [d.tool for d in datasets]
    rng = np.random.default_rng(cfg.seed)

    if cfg.fine_tune:
        bundle = init_fine_tune(init, tools)
    elif init is not None:
        bundle = init.copy()
        if [t.label for t in bundle.tools] != [t.label for t in tools]:
            raise ConfigurationError("initial bundle was trained on different tools")
    else:
        norm = Normalizer.fit(X) if normalizer is None else normalizer
        bundle = make_bundle(tools, norm, cfg.hidden, cfg.pb_dim, cfg.masks, rng)
    if normalizer is not None and not cfg.fine_tune:
        bundle.normalizer = normalizer

    params = net.parameters(bundle.stack)
    weight_state = net.AdamState.for_params(params)
    pb_states = [net.AdamState.for_params([row]) for row in bundle.pb]
    mask_bits = np.array([m.bits for m in bundle.masks], dtype=float)
    targets = bundle.normalizer.normalize(X)
    n, pb_dim = len(X), bundle.pb_dim

    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        draws = rng.integers(len(bundle.masks), size=n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_tools = tool_idx[idx]
            out, _, trace = forward_batch(
                bundle,
                X[idx],
                mask_bits[draws[start : start + cfg.batch_size]],
                bundle.pb[batch_tools],
            )
            loss, seed = masked_loss(out, targets[idx], FULL_MASK)
            grads = net.backward(bundle.stack, trace, seed)
            pb_grads = grads.input[:, -pb_dim:]
            net.adam_step(params, grads.params, weight_state, cfg.lr)
            for k in np.unique(batch_tools):
                grad_k = pb_grads[batch_tools == k].sum(axis=0)
                net.adam_step([bundle.pb[k]], [grad_k], pb_states[k], cfg.lr)
            total += loss * len(idx)
        row = {"epoch": epoch, "loss": total / n}
        counts = np.bincount(draws, minlength=len(bundle.masks))
        for mask, count in zip(bundle.masks, counts):
            row[f"mask_{mask}"] = int(count)
        history.append(row)
        if epoch == 1 or epoch % cfg.log_every == 0 or epoch == cfg.epochs:
            logging.info(msg=f"epoch {epoch}/{cfg.epochs} loss {row['loss']:.5f}")
    columns = ["epoch", "loss"] + [f"mask_{m}" for m in bundle.masks]
    return bundle, pd.DataFrame(history, columns=columns)


def pb_table(bundle):
    """The parametric bias of every tool in `bundle` as a DataFrame."""
    df = pd.DataFrame(
        {
            "label": [t.label for t in bundle.tools],
            "weight_g": [t.weight_g for t in bundle.tools],
            "length_mm": [t.length_mm for t in bundle.tools],
        }
    )
    for i in range(bundle.pb_dim):
        df[f"pb_{i}"] = bundle.pb[:, i]
    return df


def save_dataset(datasets, path):
    """Write datasets to a JSON-lines file, one sample per line with its tool index ``k``."""
    frames = []
    for d in datasets:
        frame = samples_to_frame(d.samples)
        frame["tool_label"] = d.tool.label
        frame["tool_weight_g"] = d.tool.weight_g
        frame["tool_length_mm"] = d.tool.length_mm
        frame.insert(0, "k", d.k)
        frames.append(frame)
    df = pd.concat(frames, ignore_index=True)
    df.to_json(path, orient="records", lines=True, double_precision=15)


def load_dataset(path):
    """Read a file written by :func:`save_dataset` back into a list of datasets."""
    df = pd.read_json(path, lines=True)
    datasets = []
    for k, group in df.groupby("k", sort=True):
        tool = ToolState(
            float(group["tool_weight_g"].iloc[0]), float(group["tool_length_mm"].iloc[0])
        )
        datasets.append(ToolDataset(tool, frame_to_samples(group), int(k)))
    return datasets


def dataset_to_parquet(jl_filepath, parquet_filepath):
    """Convert a JSON-lines dataset file to parquet.

    >>> import flexbody as fb
    >>> fb.dataset_to_parquet("sim_dataset.jl", "sim_dataset.parquet")
    """
    df = pd.read_json(jl_filepath, lines=True)
    for modality in MODALITIES:
        df[f"present_{modality}"] = df[f"present_{modality}"].astype(bool)
    df.to_parquet(parquet_filepath, index=False)
