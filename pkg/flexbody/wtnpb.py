"""
.. _wtnpb:

Tool-Use Network with Parametric Bias
=====================================

One network, many tools. The network is an autoencoder over the 11 sensor
values of :mod:`flexbody.sim`, with two extra inputs:

* a **modality mask** ``m``: four bits saying which of (theta, x_cog, x_tool,
  s_tool) are fed in. Masked modalities are zeroed at the input, but the
  decoder always reconstructs all 11 values.
* a **parametric bias** ``p``: a small learnable vector (2D by default), one per
  tool state. Trained together with the weights, the biases of the different
  tools arrange themselves so that tool weight and tool length become
  directions in PB space.

The 17 inputs (11 normalized sensor values, 4 mask bits, 2 PB values) go
through ``17 -> 200 -> 50 -> 8 -> 50 -> 200 -> 11``. The 8-unit layer is the
latent vector ``z``.

>>> import flexbody as fb
>>> bundle = fb.load_bundle("sim_bundle.npz")
>>> mask = fb.ModalityMask.from_string("1100")
>>> prediction = fb.reconstruct(bundle, sample, mask, bundle.pb_of("Long/Heavy"))
>>> prediction[6:9]  # the predicted tool tip, from angles and COG only

A trained network is saved as a single ``.npz`` file (a *bundle*) holding the
weights, the normalizer, the PB table and the feasible mask set.
"""

__all__ = [
    "DEFAULT_FEASIBLE_MASKS",
    "FULL_MASK",
    "BASE_MASKS",
    "ModalityMask",
    "ModelBundle",
    "Normalizer",
    "assemble_batch",
    "assemble_input",
    "decode",
    "encode",
    "forward_batch",
    "load_bundle",
    "make_bundle",
    "masked_loss",
    "reconstruct",
    "reduce_to_feasible",
    "save_bundle",
]

import json
from dataclasses import dataclass

import numpy as np

from flexbody import net
from flexbody._errors import DegenerateNormalizerError, MaskError
from flexbody.sim import MODALITIES, MODALITY_DIMS, SAMPLE_COLUMNS, ToolState

N_SENSOR = sum(MODALITY_DIMS)
N_MASK = len(MODALITIES)


@dataclass(frozen=True)
class ModalityMask:
    """Four bits ordered (theta, x_cog, x_tool, s_tool)."""

    bits: tuple

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != N_MASK or set(bits) - {0, 1}:
            raise MaskError(f"a mask needs {N_MASK} bits of 0/1, got {self.bits}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, text):
        return cls(tuple(int(c) for c in str(text)))

    def __str__(self):
        return "".join(str(b) for b in self.bits)

    def as_array(self):
        return np.array(self.bits, dtype=float)

    def covers(self, presence):
        """True when every selected modality is present."""
        return all(p or not b for b, p in zip(self.bits, presence))


BASE_MASKS = tuple(
    ModalityMask.from_string(s)
    for s in ("1000", "1100", "1010", "1001", "1110", "1101", "1011", "0111")
)
DEFAULT_FEASIBLE_MASKS = BASE_MASKS + (ModalityMask.from_string("0110"),)
FULL_MASK = ModalityMask.from_string("1111")


def reduce_to_feasible(presence, feasible=DEFAULT_FEASIBLE_MASKS):
    """Largest feasible mask using only present modalities; ties go to the earlier mask."""
    candidates = [m for m in feasible if m.covers(presence)]
    if not candidates:
        raise MaskError(f"no feasible mask for presence {tuple(presence)}")
    return max(candidates, key=lambda m: sum(m.bits))


def _expand(mask_bits):
    # (n, 4) mask bits -> (n, 11) per-dimension selector
    return np.repeat(np.atleast_2d(mask_bits).astype(float), MODALITY_DIMS, axis=1)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data):
        """Per-dimension mean and (population) standard deviation of `data` (n, 11)."""
        data = np.atleast_2d(np.asarray(data, dtype=float))
        std = data.std(axis=0)
        flat = [c for c, s in zip(SAMPLE_COLUMNS, std) if not s > 1e-12]
        if len(data) < 2 or flat:
            raise DegenerateNormalizerError(
                f"cannot normalize, zero variance in {flat or SAMPLE_COLUMNS}",
                columns=flat,
            )
        return cls(data.mean(axis=0), std)

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.std + self.mean


@dataclass
class ModelBundle:
    """Network weights, normalizer, tool states with their PBs, and the feasible masks."""

    stack: net.LayerStack
    normalizer: Normalizer
    tools: tuple
    pb: np.ndarray
    masks: tuple = DEFAULT_FEASIBLE_MASKS
    bottleneck: int = 3

    @property
    def pb_dim(self):
        return self.stack.dims[0] - N_SENSOR - N_MASK

    @property
    def latent_dim(self):
        return self.stack.dims[self.bottleneck]

    def tool_index(self, tool):
        label = tool.label if isinstance(tool, ToolState) else str(tool)
        for k, known in enumerate(self.tools):
            if known.label.lower() == label.lower():
                return k
        raise KeyError(f"{label} is not in this bundle's PB table")

    def pb_of(self, tool):
        """Copy of the trained PB of `tool` (a ToolState or its label)."""
        return self.pb[self.tool_index(tool)].copy()

    def copy(self):
        return ModelBundle(
            self.stack.copy(),
            Normalizer(self.normalizer.mean.copy(), self.normalizer.std.copy()),
            tuple(self.tools),
            self.pb.copy(),
            tuple(self.masks),
            self.bottleneck,
        )


def make_bundle(
    tools,
    normalizer,
    hidden=(200, 50, 8, 50, 200),
    pb_dim=2,
    masks=DEFAULT_FEASIBLE_MASKS,
    rng=None,
):
    """A freshly initialized bundle with all PBs at zero."""
    hidden = [int(h) for h in hidden]
    if len(hidden) % 2 == 0:
        raise ValueError("hidden layers must be symmetric around a single bottleneck")
    dims = [N_SENSOR + N_MASK + int(pb_dim)] + hidden + [N_SENSOR]
    return ModelBundle(
        stack=net.init_stack(dims, rng=rng),
        normalizer=normalizer,
        tools=tuple(tools),
        pb=np.zeros((len(tools), int(pb_dim))),
        masks=tuple(masks),
        bottleneck=len(hidden) // 2 + 1,
    )


def assemble_batch(X, mask_bits, P, normalizer):
    """Network inputs for physical sensor rows `X` (n, 11), masks (n, 4) and PBs (n, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mask_bits = np.atleast_2d(np.asarray(mask_bits, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    shown = normalizer.normalize(X) * _expand(mask_bits)
    return np.hstack([shown, mask_bits, P])


def assemble_input(sample, mask, p, normalizer, feasible=DEFAULT_FEASIBLE_MASKS):
    """The 17-vector fed to the encoder for one :class:`~flexbody.sim.StateSample`.

    Parameters
    ----------
    sample : StateSample
      The observation.
    mask : ModalityMask
      Must be feasible and may only select present modalities.
    p : numpy.ndarray
      The parametric bias.
    normalizer : Normalizer
      Sensor statistics.
    feasible : tuple of ModalityMask
      The feasible mask set.

    Returns
    -------
    x : numpy.ndarray
    """
    if mask not in feasible:
        raise MaskError(f"mask {mask} is not in the feasible set")
    if not mask.covers(sample.present):
        raise MaskError(
            f"mask {mask} requests modalities missing from the sample "
            f"(present {sample.present})"
        )
    return assemble_batch(sample.to_vector(), mask.as_array(), p, normalizer)[0]


def forward_batch(bundle, X, mask_bits, P):
    """Full-network forward pass; returns (normalized output, input, trace)."""
    inputs = assemble_batch(X, mask_bits, P, bundle.normalizer)
    output, trace = net.forward(bundle.stack, inputs)
    return output, inputs, trace


def encode(bundle, sample, mask, p):
    """Latent vector z of `sample` seen through `mask` with parametric bias `p`."""
    x = assemble_input(sample, mask, p, bundle.normalizer, bundle.masks)
    z, _ = net.forward(bundle.stack, x, 0, bundle.bottleneck)
    return z


def decode(bundle, z):
    """Denormalized 11-value prediction (theta, x_cog, x_tool, s_tool) from `z`."""
    out, _ = net.forward(bundle.stack, z, bundle.bottleneck)
    return bundle.normalizer.denormalize(out)


def reconstruct(bundle, sample, mask, p):
    return decode(bundle, encode(bundle, sample, mask, p))


def masked_loss(prediction, target, loss_mask, present=None):
    """Mean squared error over the normalized dimensions selected by `loss_mask`.

    Parameters
    ----------
    prediction, target : numpy.ndarray
      Normalized 11-vectors, or (n, 11) batches.
    loss_mask : ModalityMask or array-like
      One mask, or (n, 4) bits with one mask per row.
    present : tuple of bool, optional
      Presence flags of the target; selecting an absent modality is an error.

    Returns
    -------
    loss : float
      Mean over rows of the per-row MSE of the selected dimensions.
    seed : numpy.ndarray
      Gradient of `loss` with respect to `prediction`, zero outside the mask.
    """
    bits = loss_mask.as_array() if isinstance(loss_mask, ModalityMask) else loss_mask
    bits = np.atleast_2d(np.asarray(bits, dtype=float))
    if present is not None and np.any(bits.astype(bool) & ~np.asarray(present, bool)):
        raise MaskError("loss mask selects a modality the target does not have")
    squeeze = np.ndim(prediction) == 1
    prediction = np.atleast_2d(np.asarray(prediction, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    selector = _expand(bits)
    counts = selector.sum(axis=1)
    if np.any(counts == 0):
        raise MaskError("empty loss mask")
    diff = (prediction - target) * selector
    per_row = (diff**2).sum(axis=1) / counts
    n = len(prediction)
    seed = 2.0 * diff / counts[:, None] / n
    return float(per_row.mean()), (seed[0] if squeeze else seed)


def save_bundle(bundle, path):
    """Write `bundle` to a single ``.npz`` file."""
    meta = {
        "tools": [[float(t.weight_g), float(t.length_mm)] for t in bundle.tools],
        "masks": [str(m) for m in bundle.masks],
        "bottleneck": int(bundle.bottleneck),
    }
    arrays = net.stack_arrays(bundle.stack)
    arrays.update(
        meta=np.array(json.dumps(meta)),
        mean=bundle.normalizer.mean,
        std=bundle.normalizer.std,
        pb=bundle.pb,
    )
    np.savez(path, **arrays)


def load_bundle(path):
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        return ModelBundle(
            stack=net.stack_from_arrays(data),
            normalizer=Normalizer(data["mean"].copy(), data["std"].copy()),
            tools=tuple(ToolState(w, length) for w, length in meta["tools"]),
            pb=data["pb"].copy().reshape(len(meta["tools"]), -1),
            masks=tuple(ModalityMask.from_string(m) for m in meta["masks"]),
            bottleneck=meta["bottleneck"],
        )
