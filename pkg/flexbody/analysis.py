"""
.. _analysis:

Analyzing Parametric Biases and Control Runs
============================================

Small helpers that turn experiment outputs into the numbers worth looking at.

* :func:`pca2` projects parametric biases (or any points) on their two main
  directions, so that PB maps of different runs can be compared.
* :func:`pb_alignment` checks whether the PB map organized itself by tool: how
  well a principal axis ranks the tools by weight, and whether the long and
  the short tools can be separated by a straight line.
* :func:`metric_series` computes control and COG errors per step with their
  five-step moving averages.

>>> import flexbody as fb
>>> table = fb.pb_table(fb.load_bundle("sim_bundle.npz"))
>>> result = fb.pca2(table[["pb_0", "pb_1"]].to_numpy())
>>> result.eigenvalues, result.projected
>>> fb.pb_alignment(table)

With six tools (three weights times two lengths) a well organized map has a
``weight_spearman`` close to 1 and ``length_separable`` set.
"""

__all__ = ["PCAResult", "metric_series", "pb_alignment", "pca2"]

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.optimize import linprog


@dataclass
class PCAResult:
    components: np.ndarray
    eigenvalues: np.ndarray
    projected: np.ndarray
    mean: np.ndarray
    degenerate: bool = False


def pca2(points, n_components=2, tol=1e-12):
    """Principal components of `points` from their covariance matrix.

    Components are sorted by decreasing eigenvalue and each one is signed so
    that its largest-magnitude entry is positive.

    Parameters
    ----------
    points : array-like
      (n, d) array, at least two rows.
    n_components : int
      How many components to keep, at most d.
    tol : float
      Total variance below which the points count as identical.

    Returns
    -------
    result : PCAResult
      ``components`` has one component per row; ``projected`` holds the
      centered points in component coordinates. When all points are identical
      ``degenerate`` is set and the projection is all zeros.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) < 2:
        raise ValueError("pca2 needs an (n, d) array with at least two points")
    n_components = min(n_components, points.shape[1])
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / (len(points) - 1)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(-values, kind="stable")[:n_components]
    values = np.clip(values[order], 0.0, None)
    components = vectors[:, order].T
    largest = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), largest])
    components = components * np.where(signs == 0, 1.0, signs)[:, None]
    degenerate = bool(np.trace(cov) <= tol)
    projected = np.zeros((len(points), n_components)) if degenerate else centered @ components.T
    return PCAResult(components, values, projected, mean, degenerate)


def _separable(points, labels):
    # feasibility of y_i (w . x_i + b) >= 1
    y = np.where(labels, 1.0, -1.0)
    A = -y[:, None] * np.hstack([points, np.ones((len(points), 1))])
    result = linprog(
        np.zeros(points.shape[1] + 1),
        A_ub=A,
        b_ub=-np.ones(len(points)),
        bounds=[(None, None)] * (points.shape[1] + 1),
        method="highs",
    )
    return result.status == 0


def pb_alignment(table, long_mm=None):
    """How well the PB map of `table` lines up with tool weight and length.

    Parameters
    ----------
    table : pandas.DataFrame
      A PB table (:func:`~flexbody.trainer.pb_table`) with ``weight_g``,
      ``length_mm`` and ``pb_*`` columns.
    long_mm : float, optional
      Length from which a tool counts as long, by default the largest length
      in the table.

    Returns
    -------
    alignment : dict
      The principal axis best rank-correlated with weight and its absolute
      Spearman correlation, the same for length on the remaining axis, whether
      long and short PBs are linearly separable and the PCA degenerate flag.
    """
    pb_cols = [c for c in table.columns if c.startswith("pb_")]
    points = table[pb_cols].to_numpy(dtype=float)
    result = pca2(points)
    axes = pd.DataFrame(result.projected)

    def spearman(values):
        series = pd.Series(np.asarray(values, dtype=float))
        return [abs(axes[i].corr(series, method="spearman")) for i in axes.columns]

    weight_corr = np.nan_to_num(spearman(table["weight_g"]))
    length_corr = np.nan_to_num(spearman(table["length_mm"]))
    weight_axis = int(np.argmax(weight_corr))
    others = [i for i in range(len(length_corr)) if i != weight_axis] or [weight_axis]
    length_axis = max(others, key=lambda i: length_corr[i])
    long_mm = table["length_mm"].max() if long_mm is None else long_mm
    is_long = table["length_mm"].to_numpy() >= long_mm
    separable = bool(is_long.any() and (~is_long).any() and _separable(points, is_long))
    return {
        "weight_axis": weight_axis,
        "weight_spearman": float(weight_corr[weight_axis]),
        "length_axis": int(length_axis),
        "length_spearman": float(length_corr[length_axis]),
        "length_separable": separable,
        "degenerate": result.degenerate,
    }


def metric_series(control_error_mm, cog_error_mm, window=5):
    """Per-step errors and their moving averages over `window` steps.

    The first steps average over the steps available so far.
    """
    df = pd.DataFrame(
        {
            "control_error_mm": np.asarray(control_error_mm, dtype=float),
            "cog_error_mm": np.asarray(cog_error_mm, dtype=float),
        }
    )
    df.insert(0, "step", np.arange(len(df)))
    for col in ["control_error_mm", "cog_error_mm"]:
        df[col.replace("_mm", "_ma_mm")] = (
            df[col].rolling(window, min_periods=1).mean()
        )
    return df
