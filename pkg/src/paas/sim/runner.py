"""Scenario execution: setup, request flow, monitoring loop, scaling, trace and metrics.

A request enters at the load balancer, runs on a software instance, goes
through the data proxy to a data instance and returns. Each stage is a
separate simulator event so its timestamp shows up in the request record.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..autoscaler import Autoscaler, PipelineDelays
from ..control_plane import ComponentTerms
from ..core import TimeInterval
from ..errors import NoInstance, OrphanHost, PaasError
from ..market import ResourceTemplate, offer_from_dict
from ..monitoring import (AppTuple, HostTuple, Monitor, ThresholdDetector, aggregate,
                          assert_ordered, clean, dump_stream, percentile, union)
from ..repository import data_archive, software_archive
from ..system import Platform
from .engine import Simulator
from .host import SimHost
from .scenario import Scenario
from .workload import generate_workload

TRACE_FORMAT = "paas-trace/1"
PATH = ("lb", "software", "proxy", "data", "response")


@dataclass
class RequestRecord:
    request_id: int
    arrival: float
    kind: str
    lb_choice: str | None = None
    software_instance: str | None = None
    data_proxy: str | None = None
    data_instances: tuple = ()
    stages: list = field(default_factory=list)
    completion: float | None = None
    rejected: bool = False

    @property
    def path(self):
        return tuple(name for name, _ in self.stages)

    @property
    def latency(self):
        return None if self.completion is None else self.completion - self.arrival

    def stage_latencies(self):
        times = [self.arrival] + [t for _, t in self.stages]
        return {name: times[i + 1] - times[i] for i, (name, _) in enumerate(self.stages)}


@dataclass
class RunResult:
    trace_lines: list
    metrics: dict
    requests: list
    run: "Run"

    @property
    def trace_text(self) -> str:
        return "\n".join(self.trace_lines) + "\n"

    @property
    def trace_hash(self) -> str:
        return hashlib.sha256(self.trace_text.encode()).hexdigest()

    def records(self, kind=None):
        out = [json.loads(line) for line in self.trace_lines[1:]]
        return out if kind is None else [r for r in out if r["type"] == kind]


def _archive_for(component):
    if "archive_b64" in component:
        return base64.b64decode(component["archive_b64"])
    build = software_archive if component["kind"] == "software" else data_archive
    return build(component["name"])


class Run:
    def __init__(self, scenario: Scenario, out_dir=None, strict=True):
        self.scenario = scenario
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.strict = strict
        self.sim = Simulator()
        sc = scenario.data
        plat = sc["platform"]
        self.platform = Platform(
            [offer_from_dict(o) for o in sc["offer"]], operator=plat["operator"],
            proxies=tuple(plat["proxies"]), replication_factor=plat["replication_factor"],
            repository_root=None,
            journal_path=self.out_dir / "journal.jsonl" if self.out_dir else None,
            track_inflight=True)
        self.cp = self.platform.cp
        self.market = self.platform.market
        mon = sc["monitoring"]
        self.period = mon["period"]
        self.overload = ThresholdDetector(mon["overload_threshold"], mon["overload_sustain"])
        self.idle = ThresholdDetector(mon["idle_threshold"], mon["idle_sustain"], above=False)
        auto = sc["autoscaler"]
        self.autoscaler = Autoscaler(
            self.cp, self.market, subscriber=plat["operator"], cooldown=auto["cooldown"],
            delays=PipelineDelays(auto["subscribe_delay"], auto["configure_delay"],
                                  auto["deploy_delay"], auto["copy_bandwidth_mb_s"],
                                  auto["data_size_mb"]),
            clock=lambda: self.sim.now, attach_monitor=self._attach,
            detach_monitor=self._detach, on_released=self._released)
        self.autoscaler.sink = self._autoscaler_record
        self.hosts: dict[str, SimHost] = {}
        self.host_monitors: dict[str, Monitor] = {}
        self.app_monitors: dict[str, Monitor] = {}
        self.host_stream_all: list = []
        self.events: list = []
        self.trace: list[dict] = []
        self.requests: list[RequestRecord] = []
        self.active: dict[int, RequestRecord] = {}
        self.parked: dict[int, RequestRecord] = {}
        self.arrived = self.completed = self.rejected = 0
        self.dropped_tuples = 0
        self._binding_cache: dict[str, tuple] = {}
        self._invalidations_seen = 0
        self._consumed = {"app": {}, "data": {}}
        self._area = 0.0
        self._area_t = 0.0

    # -- trace -------------------------------------------------------------
    def emit(self, type_, **fields):
        rec = {"t": self.sim.now, "type": type_}
        rec.update(fields)
        self.trace.append(rec)

    def _autoscaler_record(self, entry):
        entry = dict(entry)
        kind = entry.pop("record")
        entry.pop("t", None)
        self.emit(kind, **entry)

    # -- hosts and monitors ------------------------------------------------
    def host(self, instance_id) -> SimHost:
        h = self.hosts.get(instance_id)
        if h is None:
            res = self.market.instance(instance_id)
            h = SimHost(self.sim, instance_id, res.capacity.capacity,
                        disk_gb=res.capacity.disk_gb * 0.1)
            self.hosts[instance_id] = h
        return h

    def _attach(self, resource):
        self.host(resource.instance_id)
        self.host_monitors.setdefault(resource.instance_id,
                                      Monitor("host", resource.instance_id, self.period))
        self.emit("monitor", host=resource.instance_id, action="attach")

    def _detach(self, resource):
        if self.host_monitors.pop(resource.instance_id, None) is not None:
            self.overload.reset(resource.instance_id)
            self.idle.reset(resource.instance_id)
            self.emit("monitor", host=resource.instance_id, action="detach")

    def _app_monitor(self, url):
        m = self.app_monitors.get(url)
        if m is None:
            m = self.app_monitors[url] = Monitor("app", url)
        return m

    # -- setup -------------------------------------------------------------
    def setup(self):
        sc = self.scenario.data
        plat = sc["platform"]
        self.emit("run", scenario=self.scenario.name, seed=self.scenario.seed)
        cids = {}
        for comp in sc["component"]:
            cid = self.platform.repository.upload(comp["provider"], _archive_for(comp))
            avail = comp.get("availability")
            terms = ComponentTerms(
                availability=TimeInterval(*avail) if avail else TimeInterval.forever(),
                performance=tuple(comp["performance"]),
                scalability=int(comp.get("scalability", 100)),
                price=float(comp.get("price", 0.0)),
                input_schema=comp.get("input_schema"), output_schema=comp.get("output_schema"))
            self.cp.declare(cid, terms)
            cids[comp["name"]] = cid
            self.emit("setup", step="upload", component=cid, provider=comp["provider"])
        rental = TimeInterval(0.0, plat["rental_hours"] * 3600.0)
        for dep in sc["deploy"]:
            comp = next(c for c in sc["component"] if c["name"] == dep["component"])
            template = ResourceTemplate.from_dict(dep["template"])
            provider = dep.get("provider") or sorted(self.market.providers)[0]
            agr = self.platform.agreement_with(provider, rental_period=rental)
            for _ in range(dep["count"]):
                res = self.platform.provision(template, comp["kind"], provider=provider)
                self.emit("setup", step="subscribe", host=res.instance_id, offer=res.offer_id,
                          agreement=agr.agreement_id)
                inst = self.cp.publish_basic(cids[comp["name"]], res)
                self.host(res.instance_id)
                self._attach(res)
                self.emit("setup", step="publish", service=inst.service_id.name,
                          url=inst.instance_url, host=res.instance_id)
        for b in sc["bind"]:
            rec = self.cp.compose(b["software"], b["data"])
            self.emit("setup", step="bind", composite=rec.name, software=b["software"],
                      data=b["data"], proxy=self.cp.bindings[b["software"]].proxy_id)

    # -- request flow ------------------------------------------------------
    def _account(self):
        now = self.sim.now
        self._area += len(self.active) * (now - self._area_t)
        self._area_t = now

    def _check(self):
        if not self.strict:
            return
        if self.arrived != self.completed + len(self.active) + self.rejected:
            raise AssertionError("request conservation violated")
        if self.platform.lb.outstanding_total() != len(self.active):
            raise AssertionError("balancer outstanding counters disagree with in-flight requests")

    def _arrive(self, arrival):
        self._account()
        self.arrived += 1
        service = self.scenario["workload"]["service"]
        rec = RequestRecord(arrival.request_id, self.sim.now, arrival.op.kind)
        self.requests.append(rec)
        try:
            url = self.platform.lb.route(service)
        except NoInstance:
            rec.rejected = True
            self.rejected += 1
            self.emit("reject", request=rec.request_id, service=service)
            self._check()
            return
        self.emit("route", request=rec.request_id, service=service, url=url,
                  outstanding=self.platform.lb.snapshot(service))
        rec.lb_choice = url
        rec.stages.append(("lb", self.sim.now))
        self.active[rec.request_id] = rec
        self._check()
        self.sim.schedule(self._hop, self._software_start, rec, arrival.op,
                          target="software")

    @property
    def _hop(self):
        return self.scenario["network"]["hop_latency"]

    def _software_start(self, rec, op):
        rec.software_instance = rec.lb_choice
        rec.stages.append(("software", self.sim.now))
        host = self.host(self.cp.instance(rec.lb_choice).host)
        host.submit(("sw", rec.request_id), self.scenario["workload"]["software_demand"],
                    lambda _jid: self._software_done(rec, op))

    def _binding(self, url):
        if len(self.cp.invalidations) != self._invalidations_seen:
            self._binding_cache.clear()
            self._invalidations_seen = len(self.cp.invalidations)
        b = self._binding_cache.get(url)
        if b is None:
            inst = self.cp.instance(url)
            b = self._binding_cache[url] = self.cp.resolve_binding(inst.service_id.name)
        return b

    def _software_done(self, rec, op):
        data_service, proxy_id = self._binding(rec.software_instance)
        rec.data_proxy = proxy_id
        self.sim.schedule(self._hop, self._at_proxy, rec, op, data_service, proxy_id,
                          target="proxy")

    def _at_proxy(self, rec, op, data_service, proxy_id):
        rec.stages.append(("proxy", self.sim.now))
        proxy = self.platform.layer[proxy_id]
        res = proxy.dispatch(data_service, op)
        self.emit("dispatch", request=rec.request_id, proxy=proxy_id, service=data_service,
                  op=op.kind, instances=list(res.instances), queued=res.queued)
        if res.queued:
            self.parked[rec.request_id] = rec
            return
        self._run_data(rec, res.instances, data_service, proxy)

    def _run_data(self, rec, instances, data_service, proxy):
        rec.stages.append(("data", self.sim.now))
        rec.data_instances = tuple(instances)
        started = self.sim.now
        waiting = set(instances)
        demand = self.scenario["workload"]["data_demand"]

        def done(jid):
            inst = jid[2]
            waiting.discard(inst)
            proxy.record_access(data_service, inst, (self.sim.now - started) * 1000.0,
                                self.sim.now)
            proxy.complete(data_service, inst)
            if not waiting:
                self.sim.schedule(self._hop, self._respond, rec, target="response")

        for inst in instances:
            host = self.host(self.cp.instance(inst).host)
            host.submit(("db", rec.request_id, inst), demand, done)

    def _released(self, service, session, released):
        proxy = self.cp.proxy_for(service)
        for op in released:
            rec = self.parked.pop(op.tag, None)
            if rec is not None:
                self._run_data(rec, (session.source, session.destination), service, proxy)

    def _respond(self, rec):
        self._account()
        rec.stages.append(("response", self.sim.now))
        rec.completion = self.sim.now
        service = self.scenario["workload"]["service"]
        self.platform.lb.complete(service, rec.lb_choice)
        started = next(t for name, t in rec.stages if name == "software")
        self._app_monitor(rec.software_instance).emit(
            AppTuple(self.sim.now, service, rec.software_instance,
                     (self.sim.now - started) * 1000.0))
        del self.active[rec.request_id]
        self.completed += 1
        self.emit("request", request=rec.request_id, kind=rec.kind, url=rec.lb_choice,
                  proxy=rec.data_proxy, data=list(rec.data_instances),
                  path=list(rec.path), latency=rec.latency)
        self._check()

    # -- monitoring loop ---------------------------------------------------
    def _fresh(self, kind, streams):
        out = []
        seen = self._consumed[kind]
        for key, stream in streams:
            start = seen.get(key, 0)
            out.append(stream[start:])
            seen[key] = len(stream)
        return out

    def _tick(self):
        now = self.sim.now
        fresh_hosts = []
        for hid in sorted(self.host_monitors):
            h = self.hosts[hid]
            t = HostTuple(now, hid, cpu_pct=h.cpu_pct(self.period),
                          memory_used=h.memory_used(), disk_used=h.disk_gb,
                          ethernet_kbps=8.0 * len(h.jobs), socket_count=len(h.jobs))
            self.host_monitors[hid].emit(t)
            self.host_stream_all.append(t)
            fresh_hosts.append(t)
        apps = self._fresh("app", sorted((u, m.stream) for u, m in self.app_monitors.items()))
        datas = self._fresh("data", sorted(
            (p.proxy_id, p.stream) for p in self.platform.layer.proxies.values()))
        batch = assert_ordered(union([fresh_hosts] + apps + datas), "union")
        skew = self.scenario["monitoring"]["skew_periods"] * self.period
        batch, dropped = clean(batch, skew)
        self.dropped_tuples += dropped
        for t in assert_ordered(batch, "clean"):
            if t.kind != "host" or t.host_id not in self.host_monitors:
                continue
            for det in (self.overload, self.idle):
                ev = det.feed(t)
                if ev is not None:
                    self._on_event(ev)
        if now + self.period <= self.scenario.duration + 1e-9:
            self.sim.schedule(self.period, self._tick, target="monitor")

    def _on_event(self, ev):
        self.events.append(ev)
        self.emit("event", kind=ev.kind, host=ev.subject, window=[ev.window_start, ev.window_end],
                  threshold=ev.threshold)
        if not self.scenario["autoscaler"]["enabled"]:
            return
        try:
            decision = self.autoscaler.decide(ev)
        except OrphanHost as exc:
            self.emit("orphan", host=ev.subject, error=str(exc))
            return
        if decision is None:
            return
        if decision.direction == "up":
            self.sim.process(self.autoscaler.scale_up_process(decision),
                             on_error=self._pipeline_failed, target="pipeline")
        else:
            try:
                self.autoscaler.scale_down(decision)
            except PaasError as exc:
                self.emit("error", where="scale_down", error=f"{type(exc).__name__}: {exc}")

    def _pipeline_failed(self, exc):
        if not isinstance(exc, PaasError):
            raise exc

    # -- driver ------------------------------------------------------------
    def execute(self) -> RunResult:
        self.setup()
        sc = self.scenario
        for arrival in generate_workload(sc["workload"], sc.seed):
            if arrival.time <= sc.duration:
                self.sim.at(arrival.time, self._arrive, arrival, target="lb")
        self.sim.schedule(self.period, self._tick, target="monitor")
        self.sim.run(until=sc.duration)
        # let in-flight requests finish; no new arrivals or samples remain
        self.sim.run()
        self._account()
        self.emit("end", arrived=self.arrived, completed=self.completed,
                  rejected=self.rejected, in_flight=len(self.active))
        header = {"format": TRACE_FORMAT, "code_version": __version__,
                  "scenario_hash": sc.digest(), "seed": sc.seed, "scenario": sc.data}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(dict(rec, i=i), sort_keys=True) for i, rec in enumerate(self.trace)]
        result = RunResult(lines, self.metrics(), self.requests, self)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "trace.jsonl").write_text(result.trace_text)
            (self.out_dir / "metrics.json").write_text(
                json.dumps(result.metrics, indent=2, sort_keys=True) + "\n")
            dump_stream(self.all_tuples(), self.out_dir / "stream.tsv")
        return result

    def all_tuples(self):
        apps = [m.stream for _, m in sorted(self.app_monitors.items())]
        datas = [p.stream for _, p in sorted(self.platform.layer.proxies.items())]
        return union([self.host_stream_all] + apps + datas)

    def metrics(self) -> dict:
        sc = self.scenario
        service = sc["workload"].get("service")
        done = [r for r in self.requests if r.completion is not None]
        lat = [r.latency for r in done]
        composite = next((f"{b['software']}+{b['data']}" for b in sc["bind"]
                          if b["software"] == service), None)
        sla_hi = (self.cp.service(composite).properties.performance[1]
                  if composite in self.cp.services else None)
        log = self.autoscaler.log
        tuples = self.all_tuples()
        window = sc["monitoring"]["aggregate_window"]
        aggs = aggregate(tuples, window)
        per_service = {}
        if service:
            per_service[service] = {
                "arrived": self.arrived, "completed": len(done), "rejected": self.rejected,
                "throughput": len(done) / sc.duration,
                "p50_latency": percentile(lat, 0.5) if lat else None,
                "p95_latency": percentile(lat, 0.95) if lat else None,
                "mean_latency": sum(lat) / len(lat) if lat else None,
                "sla_violations": sum(1 for x in lat if sla_hi is not None and x > sla_hi),
            }
        horizon = max(self.sim.now, sc.duration)
        return {
            "services": per_service,
            "scale_up": sum(1 for e in log if e.get("record") == "pipeline"
                            and e.get("event") == "done"),
            "scale_up_aborted": sum(1 for e in log if e.get("record") == "pipeline"
                                    and e.get("event") == "aborted"),
            "scale_down": sum(1 for e in log if e.get("record") == "step"
                              and e.get("step") == "Unsubscribe"),
            "events": {"overload": sum(1 for e in self.events if e.kind == "overload"),
                       "idle": sum(1 for e in self.events if e.kind == "idle")},
            "mean_in_system": self._area / horizon if horizon else 0.0,
            "arrival_rate": self.arrived / sc.duration,
            "host_utilization": {hid: h.busy_time() / horizon
                                 for hid, h in sorted(self.hosts.items())},
            "aggregated_tuples": sum(a.count for a in aggs),
            "tuples": len(tuples),
            "dropped_tuples": self.dropped_tuples,
            "stock_conserved": self.market.stock_conserved(),
        }

    def utilization(self, host_id, start, end):
        return self.hosts[host_id].utilization(start, end)


def run(scenario: Scenario, out_dir=None) -> RunResult:
    return Run(scenario, out_dir).execute()
