import random

import pytest
from hypothesis import given, settings, strategies as st

from paas.data_proxy import (READ, WRITE, DataOperation, DataProxy, ProxyLayer,
                             assign_proxy)
from paas.errors import (EmptyLayer, LastInstance, NoInstance, SessionActive, UnknownInstance,
                         WrongPhase)


def w(payload, key="x", op="add"):
    return DataOperation(WRITE, key, payload, op)


def r(key="x"):
    return DataOperation(READ, key)


def test_read_round_robin():
    p = DataProxy()
    for b in ("B1", "B2", "B3"):
        p.register_data_instance("D", b)
    assert [p.dispatch("D", r()).instances[0] for _ in range(6)] == ["B1", "B2", "B3"] * 2


def test_write_goes_everywhere_and_is_logged():
    p = DataProxy()
    p.register_data_instance("D", "B1")
    p.register_data_instance("D", "B2")
    res = p.dispatch("D", w(3))
    assert res.instances == ("B1", "B2")
    assert p.read("D", "B1", "x") == p.read("D", "B2", "x") == 3
    assert len(p.cluster("D").log) == 1


def test_empty_cluster():
    p = DataProxy()
    p.register_data_instance("D", "B1")
    p.cluster("D").status["B1"] = "draining"
    with pytest.raises(NoInstance):
        p.dispatch("D", r())


def test_single_instance_replication_queues_writes():
    p = DataProxy()
    p.register_data_instance("D", "B", {"x": 5})
    s = p.begin_replication("D", "B'")
    assert s.source == "B" and s.single
    assert p.dispatch("D", r()).instances == ("B",)  # reads keep flowing
    assert p.dispatch("D", w(1)).queued
    assert p.dispatch("D", w(2)).queued
    assert p.read("D", "B", "x") == 5
    with pytest.raises(SessionActive):
        p.begin_replication("D", "B''")
    released = p.finish_replication(s)
    assert [op.payload for op in released] == [1, 2]
    assert p.read("D", "B", "x") == p.read("D", "B'", "x") == 8


def test_pure_copy_is_equal():
    p = DataProxy()
    p.register_data_instance("D", "B", {"a": 1, "b": [1, 2]})
    s = p.begin_replication("D", "B2")
    p.finish_replication(s)
    c = p.cluster("D")
    assert c.stores["B"] == c.stores["B2"]
    assert c.stores["B"]["b"] is not c.stores["B2"]["b"]


def test_multi_instance_replays_log_on_source_and_destination():
    p = DataProxy()
    p.register_data_instance("D", "B1", {"x": 0})
    p.register_data_instance("D", "B2")
    s = p.begin_replication("D", "B3", source="B1")
    assert not s.single
    for _ in range(4):
        assert p.dispatch("D", r()).instances == ("B2",)
    for i, op in enumerate([w(7, op="set"), w(1), w(10)]):
        res = p.dispatch("D", op)
        assert res.instances == ("B2",) and not res.queued
    assert p.read("D", "B1", "x") == 0
    assert [e.op.payload for e in p.cluster("D").log.since(s.start_position)] == [7, 1, 10]
    p.finish_replication(s)
    assert {p.read("D", b, "x") for b in ("B1", "B2", "B3")} == {18}


def test_finish_twice_and_early():
    p = DataProxy()
    p.register_data_instance("D", "B")
    s = p.begin_replication("D", "B2", copy_seconds=10, now=0)
    with pytest.raises(WrongPhase):
        p.finish_replication(s, now=5)
    p.finish_replication(s, now=10)
    with pytest.raises(WrongPhase):
        p.finish_replication(s)


def test_remove_rules():
    p = DataProxy(track_inflight=True)
    p.register_data_instance("D", "B1")
    with pytest.raises(LastInstance):
        p.remove_data_instance("D", "B1")
    p.register_data_instance("D", "B2")
    with pytest.raises(UnknownInstance):
        p.remove_data_instance("D", "B9")
    p.dispatch("D", r())  # B1 now busy
    assert p.remove_data_instance("D", "B1") == "draining"
    assert p.dispatch("D", r()).instances == ("B2",)
    assert p.complete("D", "B1")
    assert p.cluster("D").instances == ["B2"]


def test_remove_blocked_during_session():
    p = DataProxy()
    p.register_data_instance("D", "B1")
    p.register_data_instance("D", "B2")
    p.begin_replication("D", "B3")
    with pytest.raises(SessionActive):
        p.remove_data_instance("D", "B2")


def test_record_access():
    p = DataProxy()
    p.register_data_instance("D", "B1")
    t = p.record_access("D", "B1", 12.0, now=3.0)
    assert (t.timestamp, t.data_service_id, t.instance, t.access_time) == (3.0, "D", "B1", 12.0)
    for i in range(99):
        p.record_access("D", "B1", 1.0, now=3.0 + i)
    assert len(p.stream) == 100
    assert all(a.timestamp <= b.timestamp for a, b in zip(p.stream, p.stream[1:]))


def test_assign_proxy():
    layer = ProxyLayer(["p0", "p1", "p2", "p3"], replication_factor=2)
    a = layer.assign_proxy("Shop")
    assert len(a) == 2 and len(set(a)) == 2
    assert a == layer.assign_proxy("Shop") == assign_proxy("Shop", ["p3", "p2", "p1", "p0"], 2)
    assert assign_proxy("Shop", ["only"], 2) == ("only",)
    with pytest.raises(EmptyLayer):
        ProxyLayer([]).assign_proxy("x")


def test_assignment_is_stable_when_a_proxy_joins():
    before = {f"s{i}": assign_proxy(f"s{i}", ["p0", "p1", "p2"], 1)[0] for i in range(200)}
    after = {k: assign_proxy(k, ["p0", "p1", "p2", "p3"], 1)[0] for k in before}
    moved = [k for k in before if before[k] != after[k]]
    assert all(after[k] == "p3" for k in moved)


def _consistency_run(seed, n_ops=1000):
    """Random workload with one replication; returns (replica states, oracle, blocked reads)."""
    rng = random.Random(seed)
    p = DataProxy()
    initial = rng.randint(1, 2)
    for i in range(initial):
        p.register_data_instance("D", f"B{i}", {} if i == 0 else None)
    oracle = {}
    begin_at = rng.randrange(50, n_ops // 2)
    end_at = rng.randrange(begin_at + 1, n_ops - 10)
    session = None
    blocked = 0
    for i in range(n_ops):
        if i == begin_at:
            session = p.begin_replication("D", "NEW")
        if i == end_at:
            p.finish_replication(session)
        key = f"k{rng.randrange(8)}"
        if rng.random() < 0.4:
            op = DataOperation(WRITE, key, rng.randint(-5, 9), rng.choice(["set", "add"]))
            op.apply(oracle)
            p.dispatch("D", op)
        else:
            res = p.dispatch("D", DataOperation(READ, key))
            blocked += res.queued or not res.instances
    c = p.cluster("D")
    return [c.stores[b] for b in c.instances], oracle, blocked


def test_consistency_oracle_seeded():
    for seed in range(120):
        states, oracle, blocked = _consistency_run(seed)
        assert blocked == 0
        assert len(states) >= 2
        for s in states:
            assert s == oracle, f"seed {seed}"


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10**9))
def test_consistency_property(seed):
    states, oracle, blocked = _consistency_run(seed, n_ops=300)
    assert blocked == 0 and all(s == oracle for s in states)
