"""Scenario files: TOML documents that fully determine a simulation run.

Loading normalizes the document (defaults filled in, catalog and component
archives inlined) so a trace header can carry everything needed for replay.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
from pathlib import Path

from ..errors import BadSpec, ScenarioInvalid
from ..market import NUMERIC_DIMS, load_toml
from .workload import generate_workload

DEFAULTS = {
    "name": "scenario",
    "seed": 0,
    "duration": 600.0,
    "platform": {"operator": "operator", "proxies": ["proxy-0", "proxy-1"],
                 "replication_factor": 2, "rental_hours": 8760.0},
    "network": {"hop_latency": 0.002},
    "monitoring": {"period": 1.0, "overload_threshold": 85.0, "overload_sustain": 180.0,
                   "idle_threshold": 20.0, "idle_sustain": 600.0,
                   "aggregate_window": 60.0, "skew_periods": 2},
    "autoscaler": {"enabled": True, "cooldown": 300.0, "subscribe_delay": 30.0,
                   "configure_delay": 20.0, "deploy_delay": 10.0,
                   "copy_bandwidth_mb_s": 50.0, "data_size_mb": 500.0},
    "workload": {"software_demand": 0.5, "data_demand": 0.05, "write_fraction": 0.0,
                 "key_space": 16, "phase": []},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class Scenario:
    def __init__(self, data: dict):
        self.data = data

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def duration(self) -> float:
        return self.data["duration"]

    @property
    def name(self) -> str:
        return self.data["name"]

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, **overrides) -> "Scenario":
        return from_dict(_merge(self.data, overrides))


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioInvalid([f"{path}: no such file"])
    try:
        doc = load_toml(path)
    except Exception as exc:  # tomli raises its own decode error type
        raise ScenarioInvalid([f"{path}: {exc}"]) from None
    return from_dict(doc, base_dir=path.parent)


def from_dict(doc: dict, base_dir=None) -> Scenario:
    errors = []
    data = _merge(DEFAULTS, doc)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    if "catalog" in data:
        cat_path = base_dir / data.pop("catalog")
        if not cat_path.exists():
            errors.append(f"catalog: {cat_path} does not exist")
        else:
            data["offer"] = list(data.get("offer", [])) + load_toml(cat_path).get("offer", [])
    offers = data.setdefault("offer", [])
    if not offers:
        errors.append("offer: catalog is empty")
    for i, o in enumerate(offers):
        for key in ("offer_id",) + NUMERIC_DIMS:
            if key not in o:
                errors.append(f"offer[{i}].{key}: required")
        for key in NUMERIC_DIMS:
            if key in o and not (isinstance(o[key], (int, float)) and o[key] > 0):
                errors.append(f"offer[{i}].{key}: must be > 0")
        o.setdefault("stock", 1)
        o.setdefault("provider", "provider")
        o.setdefault("preconfigured", [])
        if o["stock"] < 0:
            errors.append(f"offer[{i}].stock: must be >= 0")

    names = set()
    for i, c in enumerate(data.setdefault("component", [])):
        loc = f"component[{i}]"
        if "name" not in c:
            errors.append(f"{loc}.name: required")
        if c.get("kind") not in ("software", "data"):
            errors.append(f"{loc}.kind: must be 'software' or 'data'")
        c.setdefault("provider", "vendor")
        if "archive" in c:
            p = base_dir / c.pop("archive")
            if not p.exists():
                errors.append(f"{loc}.archive: {p} does not exist")
            else:
                c["archive_b64"] = base64.b64encode(p.read_bytes()).decode()
        perf = c.setdefault("performance", [0.0, 5.0])
        if len(perf) != 2 or perf[0] > perf[1]:
            errors.append(f"{loc}.performance: need [lo, hi] with lo <= hi")
        names.add(c.get("name"))

    for i, d in enumerate(data.setdefault("deploy", [])):
        loc = f"deploy[{i}]"
        if d.get("component") not in names:
            errors.append(f"{loc}.component: unknown component {d.get('component')!r}")
        if "template" not in d:
            errors.append(f"{loc}.template: required")
        else:
            for key in NUMERIC_DIMS:
                if key not in d["template"]:
                    errors.append(f"{loc}.template.{key}: required")
        d.setdefault("count", 1)
        if d["count"] < 1:
            errors.append(f"{loc}.count: must be >= 1")

    for i, b in enumerate(data.setdefault("bind", [])):
        for key in ("software", "data"):
            if b.get(key) not in names:
                errors.append(f"bind[{i}].{key}: unknown component {b.get(key)!r}")

    wl = data["workload"]
    if wl["phase"]:
        if wl.get("service") not in names:
            errors.append(f"workload.service: unknown component {wl.get('service')!r}")
        elif not any(b.get("software") == wl["service"] for b in data["bind"]):
            errors.append("workload.service: software service has no data binding")
    for key in ("software_demand", "data_demand"):
        if not wl[key] > 0:
            errors.append(f"workload.{key}: must be > 0")
    try:
        generate_workload(wl, data["seed"])
    except BadSpec as exc:
        errors.append(f"workload.phase: {exc}")

    if not data["duration"] > 0:
        errors.append("duration: must be > 0")
    mon = data["monitoring"]
    if not mon["period"] > 0:
        errors.append("monitoring.period: must be > 0")
    if not 0 <= mon["overload_threshold"] <= 100:
        errors.append("monitoring.overload_threshold: must lie in [0, 100]")
    if errors:
        raise ScenarioInvalid(errors)
    return Scenario(data)
