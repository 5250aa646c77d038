"""
.. _online:

Recognizing the Grasped Tool Online
===================================

Once the network is trained, the robot can figure out which tool it holds by
watching itself move. The weights stay frozen; only the parametric bias ``p``
is adjusted so that the network's reconstructions match what the sensors
report.

The loop, run at 5 Hz:

1. Observe the sensors. Some modalities may be unavailable (the tip leaves the
   image, no 3D tracking, ...).
2. Keep the observation only if at least one available modality moved enough
   since it was last kept: 10 deg for the joint angles, 3 mm for the COG,
   20 mm for the tool tip and 100 px on screen.
3. Store it in a first-in-first-out buffer (100 entries by default).
4. Once the buffer holds at least 5 entries, run 5 epochs of momentum SGD
   (learning rate 0.01) on ``p`` over the whole buffer. Each entry is encoded
   with the largest feasible mask of its available modalities and scored only
   on the modalities it actually has.

>>> import flexbody as fb
>>> bundle = fb.load_bundle("sim_bundle.npz")
>>> trajectory = fb.run_online(
...     model, bundle, fb.tool_state("Long/Light"), regime="B", ticks=100, seed=0
... )
>>> trajectory[["tick", "pb_0", "pb_1", "dist_Long/Light"]].tail()

Sensor regimes
--------------

* ``A``: joint angles, COG, tool tip and screen position
* ``B``: joint angles, COG and screen position
* ``C``: joint angles and COG only
"""

__all__ = [
    "REGIMES",
    "OnlineBuffer",
    "OnlineConfig",
    "OnlineEntry",
    "apply_regime",
    "maybe_collect",
    "pb_distances",
    "run_online",
    "update_pb",
]

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
import pandas as pd

from flexbody import net
from flexbody._errors import ConfigurationError, InstabilityError, IterationLimitError
from flexbody.sim import MODALITIES, MODALITY_DIMS, StateSample, observe
from flexbody.trainer import is_acceptable, sample_pose
from flexbody.wtnpb import (
    DEFAULT_FEASIBLE_MASKS,
    forward_batch,
    masked_loss,
    reduce_to_feasible,
)

REGIMES = {
    "A": (True, True, True, True),
    "B": (True, True, False, True),
    "C": (True, True, False, False),
}


@dataclass(frozen=True)
class OnlineConfig:
    thresholds: tuple = (10.0, 3.0, 20.0, 100.0)
    n_thre: int = 5
    n_max: int = 100
    epochs: int = 5
    lr: float = 0.01
    momentum: float = 0.9
    tick_hz: float = 5.0

    def __post_init__(self):
        if len(self.thresholds) != len(MODALITIES) or min(self.thresholds) <= 0:
            raise ConfigurationError("need one positive threshold per modality")
        if not 1 <= self.n_thre <= self.n_max:
            raise ConfigurationError("need 1 <= n_thre <= n_max")
        if self.epochs < 0 or not self.lr > 0 or not self.tick_hz > 0:
            raise ConfigurationError("epochs, lr and tick_hz must be positive")

    @classmethod
    def from_config(cls, config, **overrides):
        section = dict(config.get("online", {}))
        if "thresholds" in section:
            section["thresholds"] = tuple(section["thresholds"])
        section.update(overrides)
        return cls(**section)


@dataclass
class OnlineEntry:
    sample: StateSample
    mask: object
    present: tuple


class OnlineBuffer:
    """First-in-first-out store of collected observations.

    Parameters
    ----------
    capacity : int
      Maximum number of entries; the oldest entry is dropped first.
    thresholds : tuple of float
      Per-modality change needed to collect a new observation.
    feasible : tuple of ModalityMask
      Masks the network was trained on.
    """

    def __init__(
        self,
        capacity=100,
        thresholds=(10.0, 3.0, 20.0, 100.0),
        feasible=DEFAULT_FEASIBLE_MASKS,
    ):
        self.entries = deque(maxlen=int(capacity))
        self.thresholds = tuple(thresholds)
        self.feasible = tuple(feasible)
        self.last = {}

    @property
    def capacity(self):
        return self.entries.maxlen

    def __len__(self):
        return len(self.entries)


def _blocks(sample):
    return np.split(sample.to_vector(), np.cumsum(MODALITY_DIMS)[:-1])


def maybe_collect(buffer, sample):
    """Add `sample` to `buffer` if a present modality moved past its threshold.

    The first observation of a modality always counts as a change. Changes are
    measured against the last *collected* value of the same modality.

    Returns
    -------
    collected : bool
    """
    present = [i for i, p in enumerate(sample.present) if p]
    if not present:
        raise ValueError("sample has no modality present")
    blocks = _blocks(sample)
    changed = False
    for i in present:
        previous = buffer.last.get(MODALITIES[i])
        if previous is None or np.linalg.norm(blocks[i] - previous) > buffer.thresholds[i]:
            changed = True
            break
    if not changed:
        return False
    mask = reduce_to_feasible(sample.present, buffer.feasible)
    buffer.entries.append(OnlineEntry(sample, mask, tuple(bool(p) for p in sample.present)))
    for i in present:
        buffer.last[MODALITIES[i]] = blocks[i].copy()
    return True


def update_pb(buffer, bundle, p, state, cfg=None):
    """Fit the parametric bias `p` to the buffer with the weights frozen.

    Each entry is fed and scored with its own feasible mask.

    Parameters
    ----------
    buffer : OnlineBuffer
      Collected observations.
    bundle : ModelBundle
      Trained network; never modified.
    p : numpy.ndarray
      Current parametric bias.
    state : MomentumState
      Optimizer state, carried across calls.
    cfg : OnlineConfig, optional
      Epochs, learning rate and minimum buffer size.

    Returns
    -------
    p : numpy.ndarray
      The updated PB (a new array).
    updated : bool
      False when the buffer holds fewer than ``cfg.n_thre`` entries and
      nothing was done.
    """
    cfg = OnlineConfig() if cfg is None else cfg
    p = np.array(p, dtype=float)
    if len(buffer) < cfg.n_thre:
        return p, False
    X = np.vstack([e.sample.to_vector() for e in buffer.entries])
    bits = np.array([e.mask.bits for e in buffer.entries], dtype=float)
    targets = bundle.normalizer.normalize(X)
    for _ in range(cfg.epochs):
        P = np.tile(p, (len(X), 1))
        out, _, trace = forward_batch(bundle, X, bits, P)
        loss, seed = masked_loss(out, targets, bits)
        grads = net.backward(bundle.stack, trace, seed)
        p, state = net.momentum_step(p, grads.input[:, -len(p) :].sum(axis=0), state, cfg.lr)
    logging.debug(msg=f"PB update on {len(X)} entries, loss {loss:.5f}, p {p.round(4)}")
    return p, True


def apply_regime(sample, regime):
    """Copy of `sample` with the modalities `regime` does not provide removed."""
    try:
        allowed = REGIMES[regime]
    except KeyError:
        raise ConfigurationError(f"unknown regime {regime!r}, use one of {list(REGIMES)}")
    present = tuple(bool(a and b) for a, b in zip(sample.present, allowed))
    blocks = [b if keep else np.zeros_like(b) for b, keep in zip(_blocks(sample), present)]
    return StateSample(*blocks, present=present, tool=sample.tool)


def pb_distances(bundle, p):
    """Euclidean distance from `p` to every trained PB, keyed ``dist_<label>``."""
    return {
        f"dist_{tool.label}": float(np.linalg.norm(p - bundle.pb[k]))
        for k, tool in enumerate(bundle.tools)
    }


def _constrained_pose(model, tool, rng, margin_mm, max_attempts=1000):
    for _ in range(max_attempts):
        theta = sample_pose(model, rng)
        if is_acceptable(model, theta, tool, margin_mm):
            return theta
    raise ConfigurationError(
        f"no safe visible pose found for {tool.label} in {max_attempts} attempts"
    )


def run_online(
    plant,
    bundle,
    tool,
    regime="A",
    ticks=100,
    seed=0,
    p0=None,
    cfg=None,
    noise=None,
    check_model=None,
    margin_mm=10.0,
):
    """Estimate the PB of `tool` online while the robot moves through random poses.

    Parameters
    ----------
    plant : RobotModel
      The robot being observed (nominal or surrogate-real).
    bundle : ModelBundle
      Trained network, weights frozen.
    tool : ToolState
      The tool the plant actually holds.
    regime : str
      Sensor availability, a key of :data:`REGIMES`.
    ticks : int
      Number of 5 Hz ticks.
    seed : int
      Seed for poses and noise.
    p0 : numpy.ndarray, optional
      Starting PB, zeros by default.
    cfg : OnlineConfig, optional
    noise : NoiseSpec, optional
    check_model : RobotModel, optional
      Model the pose safety is checked on, `plant` by default.
    margin_mm : float
      Safety margin of the pose sampler.

    Returns
    -------
    trajectory : pandas.DataFrame
      One row per tick (tick 0 is the starting PB) with the PB, buffer size,
      whether the tick collected and updated, and the distance to every
      trained PB.
    """
    cfg = OnlineConfig() if cfg is None else cfg
    if regime not in REGIMES:
        raise ConfigurationError(f"unknown regime {regime!r}, use one of {list(REGIMES)}")
    reduce_to_feasible(REGIMES[regime], bundle.masks)
    rng = np.random.default_rng(seed)
    check_model = plant if check_model is None else check_model
    p = np.zeros(bundle.pb_dim) if p0 is None else np.array(p0, dtype=float)
    state = net.MomentumState(momentum=cfg.momentum)
    buffer = OnlineBuffer(cfg.n_max, cfg.thresholds, bundle.masks)

    def record(tick, collected, updated):
        row = {"tick": tick, "time_s": tick / cfg.tick_hz}
        row.update({f"pb_{i}": float(v) for i, v in enumerate(p)})
        row.update(
            buffer_size=len(buffer), collected=collected, updated=updated, regime=regime
        )
        row.update(pb_distances(bundle, p))
        return row

    rows = [record(0, False, False)]
    for tick in range(1, ticks + 1):
        theta = _constrained_pose(check_model, tool, rng, margin_mm)
        try:
            sample = observe(plant, theta, tool, noise=noise, rng=rng)
        except (InstabilityError, IterationLimitError) as e:
            logging.warning(msg=f"tick {tick}: skipped unstable pose ({e})")
            rows.append(record(tick, False, False))
            continue
        collected = maybe_collect(buffer, apply_regime(sample, regime))
        updated = False
        if collected:
            p, updated = update_pb(buffer, bundle, p, state, cfg)
        rows.append(record(tick, collected, updated))
    logging.info(
        msg=f"online {tool.label} regime {regime}: {ticks} ticks, final p {p.round(4)}"
    )
    return pd.DataFrame(rows)
