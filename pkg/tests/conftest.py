import os
from pathlib import Path

import pytest

from flexbody import (
    TOOL_STATES,
    NoiseSpec,
    RobotModel,
    ScenarioSpec,
    TrainConfig,
    collect_dataset,
    load_config,
    run_scenario,
    train,
)

collect_ignore = ["setup.py"]

DATA_DIR = Path(__file__).parent / "data"
SMALL_CONFIG = DATA_DIR / "small_config.json"

acceptance = pytest.mark.skipif(
    not os.environ.get("FLEXBODY_ACCEPTANCE"),
    reason="slow statistical run, set FLEXBODY_ACCEPTANCE=1 to enable",
)


@pytest.fixture(scope="session")
def small_config():
    return load_config(SMALL_CONFIG)


@pytest.fixture(scope="session")
def model(small_config):
    return RobotModel.from_config(small_config)


@pytest.fixture(scope="session")
def small_datasets(model):
    return [
        collect_dataset(model, tool, 15, seed=k, noise=NoiseSpec.zero(), k=k)
        for k, tool in enumerate(TOOL_STATES)
    ]


@pytest.fixture(scope="session")
def trained(small_datasets, small_config):
    return train(small_datasets, TrainConfig.from_config(small_config, "train", seed=0))


@pytest.fixture
def bundle(trained):
    return trained[0].copy()


@pytest.fixture(scope="session")
def scenario_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    for scenario in ["train-sim", "fine-tune"]:
        run_scenario(
            ScenarioSpec(scenario, out_dir=str(out), config_path=str(SMALL_CONFIG))
        )
    return out
