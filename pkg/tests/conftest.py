from pathlib import Path

import pytest

from paas.sim.scenario import load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def scenario_dir():
    return SCENARIOS


@pytest.fixture
def load():
    return lambda name: load_scenario(SCENARIOS / f"{name}.toml")
