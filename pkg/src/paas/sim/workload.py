"""Arrival processes and per-request data operations."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from ..data_proxy import READ, WRITE, DataOperation
from ..errors import BadSpec


@dataclass(frozen=True)
class Arrival:
    time: float
    request_id: int
    op: DataOperation


def _phase_times(phase, rng):
    kind = phase.get("kind", "deterministic")
    start = float(phase.get("start", 0.0))
    end = float(phase.get("end", start))
    if end < start:
        raise BadSpec(f"phase ends before it starts ({start} > {end})")
    if "arrivals" in phase:
        times = sorted(float(t) for t in phase["arrivals"])
        if any(t < 0 for t in times):
            raise BadSpec("explicit arrival times must be >= 0")
        return times
    if kind == "deterministic":
        interval = float(phase.get("interval", 0))
        if interval <= 0:
            raise BadSpec("deterministic phase needs interval > 0")
        n = math.floor((end - start) / interval + 1e-9)
        return [start + k * interval for k in range(1, n + 1)]
    if kind == "poisson":
        rate = float(phase.get("rate", 0))
        if rate <= 0:
            raise BadSpec("poisson phase needs rate > 0")
        times = []
        t = start
        while True:
            t += rng.expovariate(rate)
            if t > end:
                return times
            times.append(t)
    if kind == "none":
        return []
    raise BadSpec(f"unknown arrival kind {kind!r}")


def generate_workload(wl: dict, seed: int) -> list[Arrival]:
    """Expand the workload description into time-ordered arrivals, reproducible from ``seed``."""
    phases = wl.get("phase", [])
    write_fraction = float(wl.get("write_fraction", 0.0))
    if not 0.0 <= write_fraction <= 1.0:
        raise BadSpec("write_fraction must lie in [0, 1]")
    key_space = int(wl.get("key_space", 16))
    if key_space < 1:
        raise BadSpec("key_space must be >= 1")
    times = []
    for idx, phase in enumerate(phases):
        rng = random.Random(f"{seed}:arrivals:{idx}")
        times.extend(_phase_times(phase, rng))
    times.sort()
    ops_rng = random.Random(f"{seed}:ops")
    arrivals = []
    for rid, t in enumerate(times, start=1):
        key = f"k{ops_rng.randrange(key_space)}"
        if ops_rng.random() < write_fraction:
            op = DataOperation(WRITE, key, ops_rng.randint(1, 9), "add", tag=rid)
        else:
            op = DataOperation(READ, key, tag=rid)
        arrivals.append(Arrival(t, rid, op))
    return arrivals


def arrival_times(wl: dict, seed: int) -> list[float]:
    return [a.time for a in generate_workload(wl, seed)]
