"""Monitoring tuples, a small stream pipeline and threshold event detectors.

Host monitors sample at a fixed period; the app module and data proxies emit
one tuple per request. Streams are plain lists ordered by timestamp. The
pipeline stages (``union``, ``clean``, ``associate``, ``aggregate``) are pure
functions over such lists; detectors keep per-host state so the global monitor
can feed them one tuple at a time.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import astuple, dataclass, fields
from pathlib import Path

from .errors import SchemaViolation

STREAM_FORMAT = "paas-stream/1"


@dataclass(frozen=True)
class HostTuple:
    timestamp: float
    host_id: str
    cpu_pct: float
    memory_used: float = 0.0
    disk_used: float = 0.0
    ethernet_kbps: float = 0.0
    socket_count: int = 0

    kind = "host"

    @property
    def source(self):
        return self.host_id

    def problems(self):
        out = []
        if not 0 <= self.cpu_pct <= 100:
            out.append(f"cpu_pct {self.cpu_pct} outside [0, 100]")
        for name in ("memory_used", "disk_used", "ethernet_kbps", "socket_count"):
            if getattr(self, name) < 0:
                out.append(f"{name} negative")
        return out


@dataclass(frozen=True)
class AppTuple:
    timestamp: float
    service_id: str
    instance_url: str
    response_time: float  # ms

    kind = "app"

    @property
    def source(self):
        return self.instance_url

    def problems(self):
        return [] if self.response_time >= 0 else ["negative response_time"]


@dataclass(frozen=True)
class DataTuple:
    timestamp: float
    data_service_id: str
    instance: str
    access_time: float  # ms

    kind = "data"

    @property
    def source(self):
        return self.instance

    def problems(self):
        return [] if self.access_time >= 0 else ["negative access_time"]


TUPLE_TYPES = {cls.kind: cls for cls in (HostTuple, AppTuple, DataTuple)}


@dataclass(frozen=True)
class ThresholdEvent:
    subject: str
    window_start: float
    window_end: float
    metric: str
    threshold: float

    kind = "threshold"

    @property
    def timestamp(self):
        return self.window_end


class OverloadEvent(ThresholdEvent):
    kind = "overload"


class IdleEvent(ThresholdEvent):
    kind = "idle"


class Monitor:
    """One monitoring source and the stream it produces."""

    def __init__(self, kind, source, period=None):
        if kind not in TUPLE_TYPES:
            raise ValueError(f"unknown monitor kind {kind!r}")
        self.kind = kind
        self.source = source
        self.period = period
        self.stream: list = []

    def emit(self, t):
        if not isinstance(t, TUPLE_TYPES[self.kind]):
            raise SchemaViolation(f"{self.kind} monitor got {type(t).__name__}")
        bad = t.problems()
        if bad:
            raise SchemaViolation("; ".join(bad))
        if self.stream and t.timestamp < self.stream[-1].timestamp:
            raise SchemaViolation("timestamps must be non-decreasing")
        self.stream.append(t)
        return self.stream


def assert_ordered(stream, stage="stream"):
    for a, b in zip(stream, stream[1:]):
        if b.timestamp < a.timestamp:
            raise ValueError(f"{stage}: out-of-order tuple at t={b.timestamp}")
    return stream


def union(streams):
    """Merge ordered streams into one ordered by (timestamp, source)."""
    return list(heapq.merge(*streams, key=lambda t: (t.timestamp, t.source)))


def clean(stream, skew=2.0):
    """Drop tuples outside their schema ranges or more than ``skew`` behind the watermark.

    Returns ``(kept, dropped_count)``.
    """
    kept = []
    dropped = 0
    watermark = -math.inf
    for t in stream:
        if t.problems() or t.timestamp < watermark - skew:
            dropped += 1
            continue
        watermark = max(watermark, t.timestamp)
        kept.append(t)
    return kept, dropped


def associate(app_stream, host_stream, window, host_of):
    """Pair every app tuple with the latest earlier sample of its host.

    ``host_of`` maps an instance URL to its host id. Only host samples no
    older than ``window`` seconds qualify. Returns ``(pairs, unpaired)``
    where each pair is ``(app_tuple, host_tuple_or_None)``.
    """
    lookup = host_of.get if hasattr(host_of, "get") else host_of
    latest = {}
    pairs = []
    unpaired = 0
    hosts = iter(host_stream)
    pending = next(hosts, None)
    for app in app_stream:
        while pending is not None and pending.timestamp <= app.timestamp:
            latest[pending.host_id] = pending
            pending = next(hosts, None)
        h = latest.get(lookup(app.instance_url))
        if h is not None and app.timestamp - h.timestamp > window:
            h = None
        if h is None:
            unpaired += 1
        pairs.append((app, h))
    return pairs, unpaired


_METRIC = {"host": ("host_id", "cpu_pct"), "app": ("service_id", "response_time"),
           "data": ("data_service_id", "access_time")}


@dataclass(frozen=True)
class WindowAggregate:
    window_start: float
    window_end: float
    kind: str
    key: str
    metric: str
    count: int
    mean: float
    max: float
    p95: float


def percentile(values, q=0.95):
    """Nearest-rank percentile."""
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def aggregate(stream, window):
    """Tumbling-window statistics per (tuple kind, key); empty windows emit nothing."""
    buckets = defaultdict(list)
    for t in stream:
        key_field, metric = _METRIC[t.kind]
        start = math.floor(t.timestamp / window) * window
        buckets[(start, t.kind, getattr(t, key_field))].append(getattr(t, metric))
    out = []
    for (start, kind, key), vals in sorted(buckets.items()):
        out.append(WindowAggregate(start, start + window, kind, key, _METRIC[kind][1],
                                   len(vals), sum(vals) / len(vals), max(vals),
                                   percentile(vals)))
    return out


class ThresholdDetector:
    """Fires once per episode in which every sample stays past the threshold for ``sustain`` seconds.

    An episode is a run of consecutive qualifying samples; the event is raised
    at the first sample lying ``sustain`` seconds after the run began. The
    detector re-arms only after a sample breaks the run.
    """

    def __init__(self, threshold, sustain, above=True, metric="cpu_pct"):
        self.threshold = threshold
        self.sustain = sustain
        self.above = above
        self.metric = metric
        self._run_start: dict[str, float] = {}
        self._fired: dict[str, bool] = {}

    def qualifies(self, value):
        return value >= self.threshold if self.above else value <= self.threshold

    def reset(self, subject):
        self._run_start.pop(subject, None)
        self._fired.pop(subject, None)

    def feed(self, t):
        subject = t.source
        if not self.qualifies(getattr(t, self.metric)):
            self.reset(subject)
            return None
        start = self._run_start.setdefault(subject, t.timestamp)
        if self._fired.get(subject) or t.timestamp - start < self.sustain:
            return None
        self._fired[subject] = True
        cls = OverloadEvent if self.above else IdleEvent
        return cls(subject, t.timestamp - self.sustain, t.timestamp, self.metric,
                   self.threshold)


def detect_overload(host_stream, threshold_pct=85.0, sustain=180.0):
    det = ThresholdDetector(threshold_pct, sustain, above=True)
    return [e for e in map(det.feed, host_stream) if e is not None]


def detect_idle(host_stream, threshold_pct=20.0, sustain=600.0):
    det = ThresholdDetector(threshold_pct, sustain, above=False)
    return [e for e in map(det.feed, host_stream) if e is not None]


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def dump_stream(stream, path):
    """Write tuples one per line, tab-separated, after a versioned schema header."""
    header = [STREAM_FORMAT] + [
        f"{k}:" + ",".join(f.name for f in fields(cls)) for k, cls in TUPLE_TYPES.items()]
    lines = ["#" + "\t".join(header)]
    for t in stream:
        lines.append("\t".join([t.kind] + [_fmt(v) for v in astuple(t)]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_stream(path):
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#" + STREAM_FORMAT):
        raise SchemaViolation(f"{path}: missing {STREAM_FORMAT} header")
    out = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        kind, *vals = line.split("\t")
        cls = TUPLE_TYPES.get(kind)
        if cls is None:
            raise SchemaViolation(f"{path}:{n}: unknown tuple kind {kind!r}")
        flds = fields(cls)
        if len(vals) != len(flds):
            raise SchemaViolation(f"{path}:{n}: expected {len(flds)} fields")
        args = []
        for f, v in zip(flds, vals):
            if f.type in ("float",):
                args.append(float(v))
            elif f.type in ("int",):
                args.append(int(v))
            else:
                args.append(v)
        out.append(cls(*args))
    return out
