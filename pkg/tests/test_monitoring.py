import random

import pytest
from hypothesis import given, settings, strategies as st

from paas.core import render_timestamp
from paas.errors import SchemaViolation
from paas.monitoring import (AppTuple, DataTuple, HostTuple, IdleEvent, Monitor, OverloadEvent,
                             aggregate, associate, clean, detect_idle, detect_overload,
                             dump_stream, load_stream, percentile, union)


def hosts(values, host="h1", start=0.0, period=1.0):
    return [HostTuple(start + i * period, host, v) for i, v in enumerate(values)]


def test_host_tuple_example_matches_schema():
    t = HostTuple(21 * 60 + 23, "192.168.10.99", 56.0, memory_used=210.0, disk_used=25.0)
    assert render_timestamp(t.timestamp) == "2011-03-16 15:21:23"
    assert (t.cpu_pct, t.memory_used, t.disk_used) == (56.0, 210.0, 25.0)
    assert Monitor("host", "192.168.10.99").emit(t)[-1] is t


def test_emit_rejects_bad_tuples():
    m = Monitor("host", "h1")
    with pytest.raises(SchemaViolation):
        m.emit(HostTuple(0, "h1", 140.0))
    with pytest.raises(SchemaViolation):
        m.emit(AppTuple(0, "S", "u", 1.0))
    m.emit(HostTuple(5, "h1", 10.0))
    with pytest.raises(SchemaViolation):
        m.emit(HostTuple(4, "h1", 10.0))


def test_union_rules():
    a, b = [HostTuple(1, "a", 1)], [HostTuple(2, "b", 1)]
    assert union([b, a]) == [a[0], b[0]]
    x, y = HostTuple(3, "zz", 1), HostTuple(3, "aa", 1)
    assert union([[x], [y]]) == [y, x]
    assert union([a, []]) == a


def test_clean_rules():
    good = hosts([10, 20, 30])
    assert clean(good) == (good, 0)
    bad = good + [AppTuple(3, "S", "u", -1.0)]
    kept, dropped = clean(bad)
    assert kept == good and dropped == 1
    late = [HostTuple(10, "a", 1), HostTuple(7, "b", 1), HostTuple(9, "c", 1)]
    kept, dropped = clean(late, skew=2.0)
    assert [t.host_id for t in kept] == ["a", "c"] and dropped == 1


def test_associate_examples():
    h = [HostTuple(8, "h1", 10), HostTuple(9, "h1", 20)]
    app = [AppTuple(10, "S", "u1", 5.0), AppTuple(10, "S", "u2", 6.0)]
    pairs, unpaired = associate(app, h, window=5, host_of={"u1": "h1", "u2": "h1"})
    assert unpaired == 0
    assert pairs[0][1] is h[1] and pairs[1][1] is h[1]
    pairs, unpaired = associate([AppTuple(30, "S", "u1", 1.0)], h, window=5,
                                host_of={"u1": "h1"})
    assert pairs[0][1] is None and unpaired == 1


def _join_oracle(app, host, window, host_of):
    out = []
    for a in app:
        cands = [h for h in host if h.host_id == host_of[a.instance_url]
                 and h.timestamp <= a.timestamp and a.timestamp - h.timestamp <= window]
        out.append(max(cands, key=lambda h: h.timestamp) if cands else None)
    return out


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 50), st.sampled_from(["h1", "h2"])), max_size=30),
       st.lists(st.tuples(st.integers(0, 50), st.sampled_from(["u1", "u2"])), max_size=30),
       st.integers(0, 10))
def test_associate_matches_oracle(hs, apps, window):
    host = union([[HostTuple(t, h, 1.0)] for t, h in sorted(set(hs))])
    app = sorted((AppTuple(t, "S", u, 1.0) for t, u in apps), key=lambda a: a.timestamp)
    host_of = {"u1": "h1", "u2": "h2"}
    pairs, unpaired = associate(app, host, window, host_of)
    expected = _join_oracle(app, host, window, host_of)
    assert [p[1] for p in pairs] == expected
    assert unpaired == expected.count(None)


def test_aggregate_examples():
    (agg,) = aggregate(hosts([50, 60, 70]), window=60)
    assert (agg.mean, agg.max, agg.count) == (60, 70, 3)
    assert aggregate([], 60) == []
    split = aggregate([HostTuple(0, "h", 10), HostTuple(200, "h", 30)], 60)
    assert [a.window_start for a in split] == [0, 180]


def test_p95_matches_sort_oracle():
    rng = random.Random(5)
    vals = [rng.uniform(0, 100) for _ in range(100)]
    (agg,) = aggregate([HostTuple(i * 0.5, "h", v) for i, v in enumerate(vals)], 60)
    assert agg.p95 == sorted(vals)[94]
    assert percentile(list(range(1, 21)), 0.95) == 19


def _sustain_oracle(samples, threshold, sustain, above):
    """Backward-scan oracle: event at sample i if the qualifying run ending at i spans sustain."""
    ok = [(v >= threshold) if above else (v <= threshold) for _, v in samples]
    events, fired_run = [], None
    for i, (t, _) in enumerate(samples):
        if not ok[i]:
            continue
        j = i
        while j > 0 and ok[j - 1]:
            j -= 1
        if samples[i][0] - samples[j][0] >= sustain and fired_run != j:
            events.append(t)
            fired_run = j
    return events


def test_overload_constant_90():
    ev = detect_overload(hosts([90.0] * 400))
    assert [e.timestamp for e in ev] == [180.0]
    assert isinstance(ev[0], OverloadEvent)


def test_overload_never_at_84():
    assert detect_overload(hosts([84.0] * 1000)) == []


def test_overload_short_burst():
    assert detect_overload(hosts([90.0] * 170 + [50.0] * 300)) == []


def test_idle_examples():
    ev = detect_idle(hosts([10.0] * 700))
    assert [e.timestamp for e in ev] == [600.0] and isinstance(ev[0], IdleEvent)
    assert detect_idle(hosts([25.0] * 700)) == []
    assert detect_idle(hosts([10.0, 30.0] * 400)) == []


@settings(max_examples=100)
@given(st.lists(st.sampled_from([10.0, 50.0, 84.9, 85.0, 95.0]), max_size=120),
       st.integers(1, 30))
def test_detectors_match_oracle(vals, sustain):
    samples = hosts(vals)
    pairs = [(t.timestamp, t.cpu_pct) for t in samples]
    assert [e.timestamp for e in detect_overload(samples, 85.0, sustain)] == \
        _sustain_oracle(pairs, 85.0, sustain, True)
    assert [e.timestamp for e in detect_idle(samples, 20.0, sustain)] == \
        _sustain_oracle(pairs, 20.0, sustain, False)


def test_detectors_keep_hosts_apart():
    s = union([hosts([90.0] * 200, "a"), hosts([90.0] * 100 + [10.0] * 100, "b")])
    assert [(e.subject, e.timestamp) for e in detect_overload(s)] == [("a", 180.0)]


def test_stream_dump_round_trip(tmp_path):
    s = union([hosts([12.5, 99.0], "h"), [AppTuple(0.5, "S", "http://h:8080/S", 3.25)],
               [DataTuple(1.0, "D", "jdbc:mysql://h:3306/D", 0.1)]])
    path = tmp_path / "s.tsv"
    dump_stream(s, path)
    assert load_stream(path) == s
    bad = tmp_path / "bad.tsv"
    bad.write_text("no header\n")
    with pytest.raises(SchemaViolation):
        load_stream(bad)
