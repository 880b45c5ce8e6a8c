"""Deterministic discrete-event simulation of the platform under load."""

from .engine import Simulator
from .host import SimHost
from .runner import RequestRecord, Run, RunResult, run
from .scenario import Scenario, from_dict, load_scenario
from .trace import replay
from .workload import generate_workload

__all__ = ["Simulator", "SimHost", "RequestRecord", "Run", "RunResult", "run", "Scenario",
           "from_dict", "load_scenario", "replay", "generate_workload"]
