"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import contextlib
import random
import sys
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from paas.control_plane import ComponentTerms
from paas.core import ServiceId, ServiceProperties, TimeInterval, compose_properties
from paas.data_proxy import READ, WRITE, DataOperation, DataProxy
from paas.errors import AmbiguousArchive, NoMatch
from paas.load_balancer import LoadBalancer
from paas.market import NUMERIC_DIMS, ResourceOffer, ResourceTemplate, match_offer, with_weights
from paas.monitoring import HostTuple, detect_overload
from paas.repository import build_archive, software_archive, validate_archive
from paas.sim import Run, load_scenario, replay
from paas.system import Platform

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def criterion(capsys):
    """Context manager factory that prints one PASS/FAIL line past pytest's capture."""

    def say(line):
        with capsys.disabled():
            print("\n" + line)

    return lambda n, title, limit=None: _criterion(say, n, title, limit)


@contextlib.contextmanager
def _criterion(say, n, title, limit):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.2f}s, limit {limit}s"
    except BaseException as exc:
        say(f"FAIL criterion {n}: {title} ({type(exc).__name__}: {exc})")
        raise
    say(f"PASS criterion {n}: {title} ({time.perf_counter() - start:.2f}s)")


# 1 -------------------------------------------------------------------------

def test_criterion_1_overload_constants(criterion):
    with criterion(1, "overload detection at 85% sustained 180 s", limit=1.0):
        at90 = [HostTuple(float(t), "h", 90.0) for t in range(0, 1200)]
        events = detect_overload(at90, 85.0, 180.0)
        assert len(events) == 1
        assert abs(events[0].timestamp - 180.0) <= 1.0
        at84 = [HostTuple(float(t), "h", 84.0) for t in range(0, 3600)]
        assert detect_overload(at84, 85.0, 180.0) == []


# 2 -------------------------------------------------------------------------

def test_criterion_2_closed_loop_scaling(criterion):
    with criterion(2, "closed-loop scale-up, post-scale utilization 0.45 +/- 10%", limit=10.0):
        run = Run(load_scenario(SCENARIOS / "closed_loop.toml"))
        result = run.execute()
        pipelines = [r for r in result.records("pipeline") if r["event"] == "start"]
        assert len(pipelines) == 1
        steps = [r["step"] for r in result.records("step")]
        assert steps == ["Subscribe", "Configure", "Deploy", "Compose", "Monitor"]
        done = next(r for r in result.records("pipeline") if r["event"] == "done")
        # offered load on the sole instance before scaling
        first = run.cp.serving("Shop")[0].host
        assert run.utilization(first, 100.0, 180.0) == pytest.approx(0.90, rel=0.02)
        window = (done["t"] + 60.0, run.scenario.duration)
        for inst in run.cp.serving("Shop"):
            u = run.utilization(inst.host, *window)
            assert 0.45 * 0.9 <= u <= 0.45 * 1.1, (inst.instance_url, u)
        assert len(run.cp.serving("Shop")) == 2


# 3 -------------------------------------------------------------------------

def _random_op(rng, key_space=10):
    key = f"k{rng.randrange(key_space)}"
    if rng.random() < 0.45:
        return DataOperation(WRITE, key, rng.randint(-9, 9), rng.choice(["set", "add"]))
    return DataOperation(READ, key)


def test_criterion_3_replication_consistency(criterion):
    with criterion(3, "replicas equal sequential oracle, no blocked reads (100 seeds x 1000 ops)",
                   limit=30.0):
        blocked = 0
        for seed in range(100):
            rng = random.Random(seed)
            proxy = DataProxy()
            # one cluster starts with a single replica, the other with two
            proxy.register_data_instance("single", "s0", {})
            proxy.register_data_instance("multi", "m0", {})
            proxy.register_data_instance("multi", "m1")
            oracle = {"single": {}, "multi": {}}
            windows = {}
            for name in ("single", "multi"):
                b = rng.randrange(1, 900)
                windows[name] = (b, rng.randrange(b + 1, 1000))
            sessions = {}
            for i in range(1000):
                for name, (b, e) in windows.items():
                    if i == b:
                        sessions[name] = proxy.begin_replication(name, f"{name}-new")
                    if i == e:
                        proxy.finish_replication(sessions[name])
                name = rng.choice(["single", "multi"])
                op = _random_op(rng)
                res = proxy.dispatch(name, op)
                if op.kind == WRITE:
                    op.apply(oracle[name])
                elif res.queued or len(res.instances) != 1:
                    blocked += 1
            for name in ("single", "multi"):
                c = proxy.cluster(name)
                assert c.session is None
                assert f"{name}-new" in c.instances
                for inst in c.instances:
                    assert c.stores[inst] == oracle[name], (seed, name, inst)
        assert blocked == 0


# 4 -------------------------------------------------------------------------

def _oracle_rank(template, catalog):
    pool = [o for o in catalog if all(getattr(template, a) in ("*", getattr(o.capacity, a))
                                      for a in ("os", "db"))]
    if not pool:
        return []
    span = {}
    for d in NUMERIC_DIMS:
        col = [Fraction(getattr(o.capacity, d)) for o in pool]
        span[d] = (max(col) - min(col)) or Fraction(1)
    keyed = []
    for o in pool:
        dist = sum(Fraction(w) * ((Fraction(getattr(template, d)) -
                                   Fraction(getattr(o.capacity, d))) / span[d]) ** 2
                   for d, w in zip(NUMERIC_DIMS, template.weights))
        keyed.append(((dist, Fraction(o.price_per_hour), o.offer_id), o.offer_id))
    return [oid for _, oid in sorted(keyed)]


def test_criterion_4_matching_oracle(criterion):
    with criterion(4, "match_offer equals brute-force ranking on 500 random pairs", limit=5.0):
        rng = random.Random(4)
        pairs = 0
        while pairs < 500:
            n = rng.randint(1, 50)
            pick = lambda: rng.choice([0.5, 1, 2, 3, 4])
            catalog = [ResourceOffer(f"o{i}", f"o{i}",
                                     ResourceTemplate(pick(), rng.choice([1, 2, 4]), pick(),
                                                      rng.choice([20, 40, 80, 160]),
                                                      os=rng.choice(["linux", "win"])),
                                     1, rng.choice([0.1, 0.2, 0.4])) for i in range(n)]
            weights = tuple(rng.choice([0.5, 1.0, 2.0, 3.0]) for _ in range(4))
            t = ResourceTemplate(pick(), rng.choice([1, 2, 4]), pick(),
                                 rng.choice([20, 40, 80, 160]),
                                 os=rng.choice(["linux", "*"]), weights=weights)
            expected = _oracle_rank(t, catalog)
            try:
                got = [o.offer_id for o, _ in match_offer(t, catalog)]
            except NoMatch:
                got = []
            assert got == expected
            if got:
                for k in (0.25, 3.0, 10.0):
                    scaled = with_weights(t, [w * k for w in weights])
                    assert match_offer(scaled, catalog)[0][0].offer_id == got[0]
            pairs += 1


# 5 -------------------------------------------------------------------------

def test_criterion_5_load_balance_fairness(criterion):
    with criterion(5, "3 instances x 999 requests -> 333 +/- 1 each; no duplicate entries"):
        sc = load_scenario(SCENARIOS / "minimal.toml").with_overrides(
            name="fairness", duration=1100.0, autoscaler={"enabled": False},
            deploy=[{"component": "Hello", "count": 3,
                     "template": {"cpu_ghz": 1.0, "cpu_cores": 1, "memory_gb": 2.0,
                                  "disk_gb": 40.0}},
                    {"component": "HelloDB",
                     "template": {"cpu_ghz": 2.0, "cpu_cores": 2, "memory_gb": 8.0,
                                  "disk_gb": 200.0}}],
            workload={"phase": [{"kind": "deterministic", "start": 0.0, "end": 999.0,
                                 "interval": 1.0}]})
        result = Run(sc).execute()
        counts = Counter(r["url"] for r in result.records("route"))
        assert sum(counts.values()) == 999 and len(counts) == 3
        assert all(abs(c - 333) <= 1 for c in counts.values()), counts
        lb = LoadBalancer()
        for url in ["u1", "u2", "u1", "u3", "u2", "u1"]:
            lb.register("S", url)
        assert lb.urls("S") == ["u1", "u2", "u3"]


# 6 -------------------------------------------------------------------------

FIXTURES = {
    "valid software": ({"Software_Example/appcode/index.jsp": "<html/>",
                        "Software_Example/WEB-INF/web.xml": "<web-app/>"}, "software"),
    "valid data": ({"Data_Example/data/data.sql": "CREATE TABLE t (x INT);"}, "data"),
    "multi-root": ({"A/appcode/x.jsp": "x", "A/WEB-INF/web.xml": "<web-app/>",
                    "B/data/data.sql": "--"}, "invalid"),
    "missing web.xml": ({"S/appcode/index.jsp": "x"}, "invalid"),
    "missing data.sql": ({"D/data/readme.txt": "x"}, "invalid"),
    "ambiguous both kinds": ({"X/appcode/a.jsp": "x", "X/WEB-INF/web.xml": "<web-app/>",
                              "X/data/data.sql": "--"}, "ambiguous"),
}


def _classify(archive):
    try:
        c = validate_archive(archive)
    except AmbiguousArchive:
        return "ambiguous"
    return c.kind if c.ok else "invalid"


def test_criterion_6_archive_gate(criterion):
    with criterion(6, "archive corpus classified with 0 misclassifications"):
        wrong = {name: _classify(build_archive(entries))
                 for name, (entries, want) in FIXTURES.items()
                 if _classify(build_archive(entries)) != want}
        assert wrong == {}
        assert _classify(software_archive()) == "software"


# 7 -------------------------------------------------------------------------

hours = st.floats(min_value=0, max_value=1000, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(hours, hours), min_size=2, max_size=5))
def _composition_property(raw):
    ivs = [TimeInterval(a, b) for a, b in raw]
    parts = [ServiceProperties(ServiceId(f"s{i}", "software"), "p", "p", availability=iv)
             for i, iv in enumerate(ivs)]
    composed = compose_properties(ServiceId("c", "composite"), "op", parts).availability
    lo, hi = max(iv.start for iv in ivs), min(iv.end for iv in ivs)
    expected = TimeInterval(lo, hi) if all(not iv.is_empty for iv in ivs) else TimeInterval.empty()
    assert composed == expected
    for iv in ivs:
        assert iv.contains(composed)


@settings(max_examples=60, deadline=None)
@given(hours, hours, hours, st.floats(min_value=1, max_value=500))
def _publish_property(c_start, c_len, now, rent):
    template = ResourceTemplate(1, 1, 2, 40)
    plat = Platform([ResourceOffer("web", "web", template, 2, 0.1, "cloudco",
                                   frozenset({"service-container"}))])
    cid = plat.repository.upload("v", software_archive("Shop"))
    plat.cp.declare(cid, ComponentTerms(availability=TimeInterval(c_start, c_start + c_len)))
    agr = plat.market.negotiate("operator", "cloudco", TimeInterval(0, now + rent))
    host = plat.market.subscribe("operator", template, agr, now=now)
    inst = plat.cp.publish_basic(cid, host)
    assert host.properties.availability.contains(plat.cp.service("Shop").properties.availability)
    assert host.properties.availability.contains(plat.cp.availability_of(inst.instance_url))


def test_criterion_7_availability_algebra(criterion):
    with criterion(7, "composed availability is the intersection; publish never exceeds host"):
        _composition_property()
        _publish_property()


# 8 -------------------------------------------------------------------------

def test_criterion_8_determinism_and_replay(criterion, tmp_path):
    with criterion(8, "same seed -> identical trace hash; replay reports empty diff"):
        for path in sorted(SCENARIOS.glob("*.toml")):
            if path.stem in ("catalog", "template"):
                continue
            sc = load_scenario(path)
            first = Run(sc, tmp_path / path.stem).execute()
            second = Run(load_scenario(path)).execute()
            assert first.trace_hash == second.trace_hash, path.stem
            report = replay(tmp_path / path.stem / "trace.jsonl")
            assert report.identical and not report.warnings, path.stem


# 9 -------------------------------------------------------------------------

def test_criterion_9_scale_down_safety(criterion):
    with criterion(9, "idle pair retires exactly one (drain, then unsubscribe); stock conserved"):
        run = Run(load_scenario(SCENARIOS / "idle_scale_down.toml"))
        market = run.market
        checks = []
        for name in ("subscribe", "unsubscribe", "configure", "expire"):
            original = getattr(market, name)

            def wrapped(*a, _orig=original, **kw):
                out = _orig(*a, **kw)
                checks.append(market.stock_conserved())
                return out

            setattr(market, name, wrapped)
        floor = []
        run.cp.retired_listeners.append(lambda inst: floor.append(len(run.cp.serving("Blog"))))
        result = run.execute()
        steps = [(r["step"], r["status"]) for r in result.records("step")
                 if r["service"] == "Blog"]
        assert steps == [("Drain", "started"), ("Drain", "ok"), ("Unsubscribe", "ok")]
        assert floor == [1]
        assert len(run.cp.serving("Blog")) == 1
        released = [i for i in market.instances.values() if i.state == "released"]
        assert len(released) == 1 and released[0].release_reason == "subscriber"
        assert checks and all(checks) and market.stock_conserved()
        assert result.metrics["scale_down"] == 1


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
