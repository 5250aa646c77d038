"""
.. _config:

Experiment Configuration
========================

All physical constants, training settings and scenario protocols live in one
JSON document. The package ships a default (``flexbody/data/default_config.json``)
and any file you pass is merged on top of it, so a config only needs the keys
you want to change:

>>> from flexbody.config import load_config, config_hash
>>> config = load_config("small.json")
>>> config["train"]["epochs"]
30
>>> digest = config_hash(config)  # SHA-256 hex string

Sections
--------

* ``robot``: link table, joints (axis, range, deflection gain), camera and
  foot-sensor corners. Every numeric field carries its unit in its name, for
  example ``length_mm`` or ``deflection_gain_deg_per_nm``.
* ``perturbation``: how the surrogate-real plant differs from the nominal one.
* ``noise``: standard deviation of the additive sensor noise per modality.
* ``collect``: dataset sizes, safety margin and the curated pose grid.
* ``train`` / ``fine_tune``: offline training of the network.
* ``online``: collection thresholds, buffer size and optimizer of the online
  tool-state estimation.
* ``control``: latent-space controller settings.
* ``scenarios``: targets, tool sequences and lengths of the experiment runs.

The hash of the merged config is written to every scenario summary, so two
result folders can be compared at a glance.
"""

__all__ = [
    "CONFIG_SECTIONS",
    "DEFAULT_CONFIG_PATH",
    "config_hash",
    "deep_merge",
    "load_config",
]

import copy
import hashlib
import json
from pathlib import Path

from flexbody._errors import ConfigurationError

DEFAULT_CONFIG_PATH = Path(__file__).parent / "data" / "default_config.json"

CONFIG_SECTIONS = [
    "robot",
    "perturbation",
    "noise",
    "collect",
    "train",
    "fine_tune",
    "online",
    "control",
    "scenarios",
]


def deep_merge(base, override):
    """Return a copy of `base` with `override` merged in, recursing into dicts."""
    merged = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], val)
        else:
            merged[key] = copy.deepcopy(val)
    return merged


def load_config(path=None):
    """Load the default configuration, merging the JSON file at `path` over it.

    Parameters
    ----------
    path : str or pathlib.Path, optional
      A JSON file with any subset of the sections in :data:`CONFIG_SECTIONS`.

    Returns
    -------
    config : dict
      The merged configuration.
    """
    with open(DEFAULT_CONFIG_PATH) as file:
        config = json.load(file)
    if path is None:
        return config
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}", path=str(path))
    try:
        with open(path) as file:
            user_config = json.load(file)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file is not valid JSON: {e}", path=str(path))
    if not isinstance(user_config, dict):
        raise ConfigurationError("config file must contain a JSON object")
    unknown = sorted(set(user_config) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigurationError(
            f"unknown config sections: {unknown}, expected any of {CONFIG_SECTIONS}",
            unknown=unknown,
        )
    return deep_merge(config, user_config)


def config_hash(config):
    """SHA-256 hex digest of the canonical JSON form of `config`."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
