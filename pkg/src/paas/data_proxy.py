"""Virtual data connector layer: instance clusters, polling reads, replication.

Each data service is owned by one proxy, which keeps an ordered list of the
service's data instances. Reads rotate over the routable instances; writes go
to every routable instance and are appended to the cluster's write log.

Adding a replica runs a replication session:

* one instance in the cluster: it stays readable, writes are parked in a
  queue and applied everywhere (the new replica included) when the copy ends;
* several instances: one becomes the copy source and leaves the read
  rotation, the others keep serving reads and writes; at the end the writes
  logged since the session started are replayed on source and destination.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

from .errors import (EmptyLayer, LastInstance, NoInstance, NotFound, SessionActive,
                     UnknownInstance, WrongPhase)
from .monitoring import DataTuple

READ, WRITE = "read", "write"
COPYING, SYNCING, DONE = "copying", "syncing", "done"
SERVING, DRAINING, PENDING = "serving", "draining", "pending"


@dataclass(frozen=True)
class DataOperation:
    kind: str
    key: object = None
    payload: float = 0
    op: str = "set"
    tag: object = None

    def __post_init__(self):
        if self.kind not in (READ, WRITE):
            raise ValueError(f"bad operation kind {self.kind!r}")
        if self.kind == WRITE and self.op not in ("set", "add"):
            raise ValueError(f"bad write transform {self.op!r}")

    def apply(self, state: dict):
        if self.op == "set":
            state[self.key] = self.payload
        else:
            state[self.key] = state.get(self.key, 0) + self.payload


@dataclass(frozen=True)
class LogEntry:
    seq: int
    op: DataOperation


class WriteLog:
    def __init__(self):
        self.entries: list[LogEntry] = []

    def __len__(self):
        return len(self.entries)

    @property
    def position(self) -> int:
        return self.entries[-1].seq if self.entries else 0

    def append(self, op: DataOperation) -> int:
        seq = self.position + 1
        self.entries.append(LogEntry(seq, op))
        return seq

    def since(self, position: int) -> list[LogEntry]:
        return [e for e in self.entries if e.seq > position]


@dataclass
class ReplicationSession:
    service_id: str
    source: str
    destination: str
    start_position: int
    single: bool
    snapshot: dict = field(repr=False, default_factory=dict)
    pending: list = field(default_factory=list)
    phase: str = COPYING
    ready_at: float | None = None


@dataclass
class DispatchResult:
    instances: tuple
    queued: bool = False
    seq: int | None = None


class DataCluster:
    def __init__(self, service_id):
        self.service_id = service_id
        self.instances: list[str] = []
        self.status: dict[str, str] = {}
        self.stores: dict[str, dict] = {}
        self.inflight: dict[str, int] = {}
        self.served: dict[str, int] = {}
        self.cursor = 0
        self.log = WriteLog()
        self.session: ReplicationSession | None = None

    def routable(self) -> list[str]:
        s = self.session
        out = []
        for inst in self.instances:
            if self.status[inst] != SERVING:
                continue
            if s is not None and not s.single and inst == s.source:
                continue
            out.append(inst)
        return out

    @property
    def quiescent(self) -> bool:
        return self.session is None and not any(self.inflight.values())


class DataProxy:
    def __init__(self, proxy_id="proxy-0", on_drained=None, track_inflight=False):
        self.proxy_id = proxy_id
        # in-flight counts need completion calls, which only the simulator makes
        self.track_inflight = track_inflight
        self.clusters: dict[str, DataCluster] = {}
        self.stream: list[DataTuple] = []
        self.trace: list[tuple] = []
        self.on_drained = on_drained

    def cluster(self, service_id) -> DataCluster:
        try:
            return self.clusters[str(service_id)]
        except KeyError:
            raise NotFound(f"{self.proxy_id} holds no cluster for {service_id}") from None

    def register_data_instance(self, service_id, instance, initial_state=None) -> list[str]:
        """Add a ready instance to the rotation (cluster seeding, not replication)."""
        service_id = str(service_id)
        c = self.clusters.setdefault(service_id, DataCluster(service_id))
        if instance in c.status:
            return list(c.instances)
        if c.instances and initial_state is None:
            # seed from an existing replica so the cluster stays consistent
            initial_state = copy.deepcopy(c.stores[c.instances[0]])
        self._add(c, instance, dict(initial_state or {}), SERVING)
        return list(c.instances)

    def _add(self, c, instance, state, status):
        c.instances.append(instance)
        c.status[instance] = status
        c.stores[instance] = state
        c.inflight[instance] = 0
        c.served[instance] = 0

    def dispatch(self, service_id, op: DataOperation) -> DispatchResult:
        c = self.cluster(service_id)
        live = c.routable()
        if not live:
            raise NoInstance(f"no routable data instance for {service_id}")
        if op.kind == READ:
            n = len(c.instances)
            chosen = None
            for step in range(n):
                idx = (c.cursor + step) % n
                if c.instances[idx] in live:
                    chosen = idx
                    break
            c.cursor = (chosen + 1) % n
            inst = c.instances[chosen]
            self._hold(c, inst)
            c.served[inst] += 1
            self.trace.append(("read", str(service_id), inst))
            return DispatchResult((inst,))
        s = c.session
        if s is not None and s.single:
            s.pending.append(op)
            self.trace.append(("write-queued", str(service_id), len(s.pending)))
            return DispatchResult((), queued=True)
        for inst in live:
            op.apply(c.stores[inst])
            self._hold(c, inst)
        seq = c.log.append(op)
        self.trace.append(("write", str(service_id), seq, tuple(live)))
        return DispatchResult(tuple(live), seq=seq)

    def _hold(self, c, instance):
        if self.track_inflight:
            c.inflight[instance] += 1

    def complete(self, service_id, instance) -> bool:
        """Finish one in-flight operation; True when this completes a drain."""
        c = self.cluster(service_id)
        if c.inflight.get(instance, 0) <= 0:
            raise ValueError(f"no in-flight operation on {instance}")
        c.inflight[instance] -= 1
        if c.status[instance] == DRAINING and c.inflight[instance] == 0:
            self._drop(c, instance)
            return True
        return False

    def read(self, service_id, instance, key, default=None):
        return self.cluster(service_id).stores[instance].get(key, default)

    def begin_replication(self, service_id, new_instance, *, source=None,
                          copy_seconds=0.0, now=0.0) -> ReplicationSession:
        c = self.cluster(service_id)
        if c.session is not None:
            raise SessionActive(f"{service_id} already replicating to {c.session.destination}")
        if new_instance in c.status:
            raise UnknownInstance(f"{new_instance} already belongs to {service_id}")
        serving = [i for i in c.instances if c.status[i] == SERVING]
        if not serving:
            raise NoInstance(f"no data instance to copy for {service_id}")
        if source is None:
            source = min(serving, key=lambda i: (c.inflight[i], i))
        elif source not in serving:
            raise UnknownInstance(f"{source} is not a serving member of {service_id}")
        session = ReplicationSession(
            service_id=str(service_id), source=source, destination=new_instance,
            start_position=c.log.position, single=len(serving) == 1,
            snapshot=copy.deepcopy(c.stores[source]), ready_at=now + copy_seconds)
        c.session = session
        self._add(c, new_instance, {}, PENDING)
        self.trace.append(("replication", str(service_id), COPYING, source, new_instance))
        return session

    def finish_replication(self, session: ReplicationSession, now=None) -> list[DataOperation]:
        """Complete the copy and synchronize; returns the writes released from the queue."""
        c = self.cluster(session.service_id)
        if c.session is not session or session.phase != COPYING:
            raise WrongPhase(f"session for {session.service_id} is {session.phase}")
        if now is not None and session.ready_at is not None and now < session.ready_at:
            raise WrongPhase(f"copy still running until t={session.ready_at}")
        session.phase = SYNCING
        dest, src = session.destination, session.source
        c.stores[dest] = copy.deepcopy(session.snapshot)
        released = []
        if session.single:
            released = list(session.pending)
            session.pending.clear()
            for op in released:
                for inst in (src, dest):
                    op.apply(c.stores[inst])
                    self._hold(c, inst)
                c.log.append(op)
        else:
            for entry in c.log.since(session.start_position):
                entry.op.apply(c.stores[src])
                entry.op.apply(c.stores[dest])
        c.status[dest] = SERVING
        session.phase = DONE
        c.session = None
        self.trace.append(("replication", session.service_id, DONE, src, dest, len(released)))
        return released

    def remove_data_instance(self, service_id, instance) -> str:
        """Take an instance out of rotation at a quiescent point; "removed" or "draining"."""
        c = self.cluster(service_id)
        if instance not in c.status:
            raise UnknownInstance(f"{instance} not in {service_id}")
        if c.session is not None:
            raise SessionActive(f"{service_id} is replicating; removal must wait")
        if sum(1 for i in c.instances if c.status[i] == SERVING) <= 1:
            raise LastInstance(f"{instance} is the last replica of {service_id}")
        if c.inflight[instance] == 0:
            self._drop(c, instance)
            return "removed"
        c.status[instance] = DRAINING
        return "draining"

    def _drop(self, c, instance):
        idx = c.instances.index(instance)
        c.instances.pop(idx)
        for d in (c.status, c.stores, c.inflight, c.served):
            d.pop(instance)
        if idx < c.cursor:
            c.cursor -= 1
        c.cursor = c.cursor % len(c.instances) if c.instances else 0
        if self.on_drained is not None:
            self.on_drained(c.service_id, instance)

    def record_access(self, service_id, instance, latency_ms, now) -> DataTuple:
        t = DataTuple(timestamp=now, data_service_id=str(service_id), instance=instance,
                      access_time=latency_ms)
        self.stream.append(t)
        return t


def _score(key: str, proxy_id: str) -> bytes:
    return hashlib.sha256(f"{key}|{proxy_id}".encode()).digest()


class ProxyLayer:
    """A set of data proxies with stable (rendezvous) hashing of services onto them."""

    def __init__(self, proxy_ids=("proxy-0", "proxy-1"), replication_factor=2,
                 on_drained=None, track_inflight=False):
        self.proxies = {pid: DataProxy(pid, on_drained=on_drained, track_inflight=track_inflight)
                        for pid in proxy_ids}
        self.replication_factor = replication_factor

    def _ranked(self, key):
        if not self.proxies:
            raise EmptyLayer("proxy layer is empty")
        return sorted(self.proxies, key=lambda pid: _score(key, pid), reverse=True)

    def assign_proxy(self, software_service_id) -> tuple:
        ranked = self._ranked(str(software_service_id))
        return tuple(ranked[:max(1, min(self.replication_factor, len(ranked)))])

    def owner(self, data_service_id) -> DataProxy:
        return self.proxies[self._ranked(str(data_service_id))[0]]

    def __getitem__(self, proxy_id) -> DataProxy:
        return self.proxies[proxy_id]

    def streams(self):
        return [p.stream for p in self.proxies.values()]


def assign_proxy(software_service_id, proxy_ids, replication_factor=2) -> tuple:
    return ProxyLayer(proxy_ids, replication_factor).assign_proxy(software_service_id)
