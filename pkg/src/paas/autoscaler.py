"""Turns overload/idle events into scale-up and scale-down pipelines.

Scale-up replicates the bottleneck basic service onto a freshly subscribed
host: Subscribe; Configure; Deploy; Compose; Monitor. Pipelines are written
as generators that yield simulated delays between steps, so the same code
runs instantly (``scale_up``) or on the simulator timeline (``scale_up_process``).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .control_plane import REQUIRED_ENV
from .errors import LastInstance, OrphanHost, PaasError
from .market import RELEASED, ResourceTemplate
from .monitoring import IdleEvent, OverloadEvent

UP, DOWN = "up", "down"
SCALE_UP_STEPS = ("Subscribe", "Configure", "Deploy", "Compose", "Monitor")


@dataclass(frozen=True)
class ScalingDecision:
    service: str
    direction: str
    tier: str
    event: object
    timestamp: float
    template: ResourceTemplate | None = None
    origin_host: str | None = None
    victim: str | None = None

    def __post_init__(self):
        if self.direction == UP and self.template is None:
            raise ValueError("scale-up decisions carry a template")
        if self.direction == DOWN and self.victim is None:
            raise ValueError("scale-down decisions carry a victim")


@dataclass
class PipelineDelays:
    subscribe: float = 30.0
    configure: float = 20.0
    deploy: float = 10.0
    copy_bandwidth_mb_s: float = 50.0
    data_size_mb: float = 500.0

    @property
    def copy_seconds(self):
        return self.data_size_mb / self.copy_bandwidth_mb_s


class Autoscaler:
    def __init__(self, control_plane, market, *, subscriber="operator", cooldown=300.0,
                 delays=None, clock=None, attach_monitor=None, detach_monitor=None,
                 on_released=None):
        self.cp = control_plane
        self.market = market
        self.subscriber = subscriber
        self.cooldown = cooldown
        self.delays = delays or PipelineDelays()
        self.clock = clock
        self.attach_monitor = attach_monitor
        self.detach_monitor = detach_monitor
        self.on_released = on_released
        self.last_action: dict[str, float] = {}
        self.in_flight: set[str] = set()
        self.log: list[dict] = []
        self.sink = None  # optional callable receiving each log record as it is written
        self._virtual = 0.0
        self._retiring: dict[str, ScalingDecision] = {}
        control_plane.retired_listeners.append(self._retired)

    def now(self):
        return self.clock() if self.clock is not None else self._virtual

    def _record(self, **fields):
        fields.setdefault("t", self.now())
        self.log.append(fields)
        if self.sink is not None:
            self.sink(fields)

    # -- decisions ---------------------------------------------------------
    def decide(self, event, now=None) -> ScalingDecision | None:
        now = event.timestamp if now is None else now
        inst = self.cp.on_host(event.subject)
        if inst is None:
            raise OrphanHost(f"no service runs on host {event.subject}")
        service = inst.service_id.name
        tier = inst.service_id.kind
        direction = UP if isinstance(event, OverloadEvent) else DOWN
        if not isinstance(event, (OverloadEvent, IdleEvent)):
            raise TypeError(f"unsupported event {event!r}")

        def no_action(reason):
            self._record(**{"t": now, "record": "decision", "service": service,
                             "direction": direction, "host": event.subject,
                             "action": "none", "reason": reason})
            return None

        if service in self.in_flight:
            return no_action("pipeline in flight")
        last = self.last_action.get(service)
        if last is not None and now - last < self.cooldown:
            return no_action("cooldown")
        if direction == UP:
            host = self.market.instance(inst.host)
            decision = ScalingDecision(service, UP, tier, event, now,
                                       template=replace(host.capacity, weights=(1.0,) * 4),
                                       origin_host=inst.host)
        else:
            victim = self._pick_victim(service, tier)
            if victim is None:
                return no_action("floor of one instance")
            decision = ScalingDecision(service, DOWN, tier, event, now, victim=victim)
        self.last_action[service] = now
        self._record(**{"t": now, "record": "decision", "service": service,
                         "direction": direction, "host": event.subject, "tier": tier,
                         "action": "scale", "victim": decision.victim})
        return decision

    def _pick_victim(self, service, tier):
        serving = self.cp.serving(service)
        if len(serving) < 2:
            return None
        if tier == "software":
            load = {e.url: e.routed for e in self.cp.lb.table.get(service, [])}
        else:
            c = self.cp.proxy_for(service).cluster(service)
            if c.session is not None:
                return None
            load = dict(c.served)
        candidates = [i.instance_url for i in serving if i.instance_url in load]
        if len(candidates) < 2:
            return None
        return min(candidates, key=lambda u: (load[u], u))

    # -- scale up ----------------------------------------------------------
    def scale_up(self, decision) -> object:
        """Run the scale-up pipeline to completion, ignoring step delays."""
        self._virtual = decision.timestamp
        gen = self.scale_up_process(decision)
        result = None
        while True:
            try:
                self._virtual += next(gen)
            except StopIteration as stop:
                result = stop.value
                break
        return result

    def scale_up_process(self, decision):
        if decision.direction != UP:
            raise ValueError("scale_up needs an 'up' decision")
        service = decision.service
        rec = self.cp.service(service)
        origin = self.market.instance(decision.origin_host)
        agreement = self.market.agreements[origin.agreement_id]
        self.in_flight.add(service)
        undo = []
        step = None
        self._record(record="pipeline", service=service, event="start", tier=decision.tier)
        try:
            step = "Subscribe"
            yield self.delays.subscribe
            host = self.market.subscribe(self.subscriber, decision.template, agreement,
                                         now=self.now())
            undo.append(lambda: self.market.unsubscribe(host, reason="rollback"))
            self._record(record="step", service=service, step=step, status="ok",
                         host=host.instance_id)

            step = "Configure"
            env = {REQUIRED_ENV[rec.kind]}
            if env <= host.configured_env:
                self._record(record="step", service=service, step=step, status="skipped")
            else:
                yield self.delays.configure
                self.market.configure(host, env)
                self._record(record="step", service=service, step=step, status="ok")

            step = "Deploy"
            yield self.delays.deploy
            inst = self.cp.publish_basic(rec.component_id, host, register=False)
            undo.append(lambda: self.cp.abort_instance(inst.instance_url))
            self._record(record="step", service=service, step=step, status="ok",
                         url=inst.instance_url)

            step = "Compose"
            if rec.kind == "software":
                self.cp.register_instance(service, inst.instance_url)
            else:
                copy_seconds = self.delays.copy_seconds
                session = self.cp.begin_data_replica(inst.instance_url,
                                                     copy_seconds=copy_seconds, now=self.now())
                self._record(record="replication", service=service, phase="copying",
                             source=session.source, destination=session.destination)
                yield copy_seconds
                released = self.cp.finish_data_replica(session, now=self.now())
                self._record(record="replication", service=service, phase="done",
                             source=session.source, destination=session.destination,
                             released=len(released))
                if self.on_released is not None:
                    self.on_released(service, session, released)
            self._record(record="step", service=service, step=step, status="ok")

            step = "Monitor"
            if self.attach_monitor is not None:
                self.attach_monitor(host)
            self._record(record="step", service=service, step=step, status="ok")
        except PaasError as exc:
            for action in reversed(undo):
                action()
            self._record(record="step", service=service, step=step, status="failed",
                         error=f"{type(exc).__name__}: {exc}")
            self._record(record="pipeline", service=service, event="aborted")
            raise
        finally:
            self.in_flight.discard(service)
        self._record(record="pipeline", service=service, event="done", url=inst.instance_url)
        return inst

    # -- scale down --------------------------------------------------------
    def scale_down(self, decision):
        """Drain the victim; its host is released once the drain completes."""
        if decision.direction != DOWN:
            raise ValueError("scale_down needs a 'down' decision")
        if len(self.cp.serving(decision.service)) < 2:
            raise LastInstance(decision.service)
        self._retiring[decision.victim] = decision
        self._record(record="step", service=decision.service, step="Drain", status="started",
                     url=decision.victim)
        self.cp.deregister_instance(decision.victim)
        return self.cp.instance(decision.victim)

    def _retired(self, inst):
        decision = self._retiring.pop(inst.instance_url, None)
        if decision is None:
            return
        host = self.market.instance(inst.host)
        self._record(record="step", service=decision.service, step="Drain", status="ok",
                     url=inst.instance_url)
        if self.detach_monitor is not None:
            self.detach_monitor(host)
        if host.state != RELEASED and not host.hosted:
            self.market.unsubscribe(host)
            self._record(record="step", service=decision.service, step="Unsubscribe",
                         status="ok", host=host.instance_id)

    def handle(self, event, now=None):
        """Decide and, for scale-down, act immediately; scale-up decisions are returned to run."""
        decision = self.decide(event, now)
        if decision is not None and decision.direction == DOWN:
            self.scale_down(decision)
        return decision
