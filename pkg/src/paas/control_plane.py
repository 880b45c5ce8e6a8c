"""Center manager: publishes basic services, composes them and owns the mapping tables.

Every mapping mutation is appended to a journal (one JSON object per line)
so the load-balancer and data-proxy tables can be rebuilt after a restart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import (ServiceId, ServiceProperties, TimeInterval, compose_properties,
                   interval_intersect)
from .errors import (ComponentNotFound, EnvMissing, HostInactive, HostOccupied,
                     NoServingInstance, NotFound, PaasError, SchemaMismatch, Unbound,
                     UnknownService)
from .market import ACTIVE, CONFIGURED

SERVICE_CONTAINER = "service-container"
DATABASE = "database"
REQUIRED_ENV = {"software": SERVICE_CONTAINER, "data": DATABASE}

DEPLOYING, SERVING, DRAINING, RETIRED = "deploying", "serving", "draining", "retired"


@dataclass(frozen=True)
class ComponentTerms:
    """What a vendor declares about a component before it is published."""
    availability: TimeInterval = field(default_factory=TimeInterval.forever)
    performance: tuple = (0.0, 1.0)
    scalability: int = 100
    price: float = 0.0
    input_schema: str | None = None
    output_schema: str | None = None


@dataclass
class ServiceRecord:
    id: ServiceId
    properties: ServiceProperties
    component_id: str | None = None
    composition: tuple | None = None
    input_schema: str | None = None
    output_schema: str | None = None

    def __post_init__(self):
        if (self.component_id is None) == (self.composition is None):
            raise ValueError("a service is either basic (component) or composite (composition)")

    @property
    def kind(self):
        return self.id.kind

    @property
    def name(self):
        return self.id.name


@dataclass
class ServiceInstance:
    instance_url: str
    service_id: ServiceId
    host: str
    state: str = DEPLOYING


@dataclass(frozen=True)
class Binding:
    data_service: str
    proxy_id: str
    reserved: tuple = ()


class Journal:
    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.entries: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, record: dict):
        self.entries.append(record)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @staticmethod
    def read(path) -> list[dict]:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def replay_mapping(records):
    """Fold journal records into ``(instances, bindings)``.

    ``instances`` maps service name to ``{url: (tier, proxy_id)}`` in
    registration order; ``bindings`` maps software to (data, proxy).
    """
    instances: dict[str, dict] = {}
    bindings: dict[str, tuple] = {}
    for r in records:
        op = r["op"]
        if op == "register":
            instances.setdefault(r["service"], {})[r["url"]] = (r["tier"], r.get("proxy"))
        elif op == "deregister":
            instances.get(r["service"], {}).pop(r["url"], None)
        elif op == "bind":
            bindings[r["software"]] = (r["data"], r["proxy"])
    return instances, bindings


def restore_tables(records, load_balancer, layer):
    """Rebuild routing tables on fresh balancer/proxy objects from journal records."""
    instances, _ = replay_mapping(records)
    for service, urls in instances.items():
        for url, (tier, proxy_id) in urls.items():
            if tier == "software":
                load_balancer.register(service, url)
            else:
                layer[proxy_id].register_data_instance(service, url)


class ControlPlane:
    def __init__(self, repository, market, load_balancer, layer, *, operator="operator",
                 journal_path=None):
        self.repository = repository
        self.market = market
        self.lb = load_balancer
        self.layer = layer
        self.operator = operator
        self.journal = Journal(journal_path)
        self.services: dict[str, ServiceRecord] = {}
        self.instances: dict[str, ServiceInstance] = {}
        self.bindings: dict[str, Binding] = {}
        self.terms: dict[str, ComponentTerms] = {}
        self.data_owner: dict[str, str] = {}
        self.invalidations: list[tuple] = []
        self.retired_listeners: list = []
        load_balancer.on_drained = self._drained
        for proxy in layer.proxies.values():
            proxy.on_drained = self._drained

    # -- lookups -----------------------------------------------------------
    def service(self, name) -> ServiceRecord:
        try:
            return self.services[str(name)]
        except KeyError:
            raise UnknownService(f"no service {name!r}") from None

    def instance(self, url) -> ServiceInstance:
        try:
            return self.instances[url]
        except KeyError:
            raise NotFound(f"no service instance {url!r}") from None

    def serving(self, name) -> list[ServiceInstance]:
        return [i for i in self.instances.values()
                if i.service_id.name == str(name) and i.state == SERVING]

    def live(self, name) -> list[ServiceInstance]:
        return [i for i in self.instances.values()
                if i.service_id.name == str(name) and i.state != RETIRED]

    def on_host(self, host_id) -> ServiceInstance | None:
        for inst in self.instances.values():
            if inst.host == host_id and inst.state != RETIRED:
                return inst
        return None

    def component_of(self, name) -> str:
        return self.service(name).component_id

    def proxy_for(self, data_service):
        return self.layer[self.data_owner[str(data_service)]]

    # -- publishing --------------------------------------------------------
    def declare(self, component_id, terms: ComponentTerms):
        if component_id not in self.repository:
            raise ComponentNotFound(component_id)
        self.terms[component_id] = terms

    def _service_for(self, pkg):
        for rec in self.services.values():
            if rec.component_id == pkg.component_id:
                return rec
        name = pkg.root if pkg.root not in self.services else pkg.component_id
        terms = self.terms.get(pkg.component_id, ComponentTerms())
        props = ServiceProperties(
            identifier=ServiceId(name, pkg.kind), ownership=pkg.provider,
            management=self.operator, usufruct=frozenset({self.operator}),
            availability=terms.availability, performance=tuple(terms.performance),
            scalability=terms.scalability, price=terms.price)
        rec = ServiceRecord(ServiceId(name, pkg.kind), props, component_id=pkg.component_id,
                            input_schema=terms.input_schema, output_schema=terms.output_schema)
        self.services[name] = rec
        self.journal.append({"op": "service", "service": name, "kind": pkg.kind,
                             "component": pkg.component_id})
        return rec

    def publish_basic(self, component_id, host, *, register=True) -> ServiceInstance:
        """Deploy a component onto a resource instance and announce the (service, URL) pair.

        With ``register=False`` the instance is deployed but not routable;
        data replicas use this and join their cluster through replication.
        """
        if component_id not in self.repository:
            raise ComponentNotFound(component_id)
        pkg = self.repository.fetch(component_id)
        if host.state not in (CONFIGURED, ACTIVE):
            raise HostInactive(f"{host.instance_id} is {host.state}")
        need = REQUIRED_ENV[pkg.kind]
        if need not in host.configured_env:
            raise EnvMissing(f"{host.instance_id} lacks {need}")
        if host.hosted:
            raise HostOccupied(f"{host.instance_id} already runs {host.hosted[0]}")
        if not self.repository.verify(component_id):
            raise PaasError(f"{component_id}: package integrity check failed")
        rec = self._service_for(pkg)
        # a replica can never outlive its host
        window = interval_intersect(rec.properties.availability, host.properties.availability)
        if window != rec.properties.availability and not self.serving(rec.name):
            rec.properties = replace(rec.properties, availability=window)
        url = _instance_url(pkg.kind, host.instance_id, rec.name)
        if url in self.instances and self.instances[url].state != RETIRED:
            raise PaasError(f"{url} already deployed")
        self.market.activate(host)
        host.hosted.append(url)
        inst = ServiceInstance(url, rec.id, host.instance_id)
        self.instances[url] = inst
        if register:
            self.register_instance(rec.name, url)
        return inst

    def availability_of(self, url) -> TimeInterval:
        """Effective availability of one published instance."""
        inst = self.instance(url)
        host = self.market.instance(inst.host)
        return interval_intersect(self.service(inst.service_id.name).properties.availability,
                                  host.properties.availability)

    def register_instance(self, service_id, url):
        rec = self.service(service_id)
        inst = self.instance(url)
        if rec.kind == "software":
            self.lb.register(rec.name, url)
            proxy_id = None
        elif rec.kind == "data":
            proxy = self._owner(rec.name)
            proxy.register_data_instance(rec.name, url)
            proxy_id = proxy.proxy_id
        else:
            raise UnknownService(f"{service_id} is composite and has no instances")
        inst.state = SERVING
        self.journal.append({"op": "register", "service": rec.name, "url": url,
                             "tier": rec.kind, "proxy": proxy_id})
        return inst

    def _owner(self, data_service):
        name = str(data_service)
        if name not in self.data_owner:
            self.data_owner[name] = self.layer.owner(name).proxy_id
        return self.layer[self.data_owner[name]]

    # -- data replicas -----------------------------------------------------
    def begin_data_replica(self, url, *, copy_seconds=0.0, now=0.0):
        inst = self.instance(url)
        proxy = self._owner(inst.service_id.name)
        return proxy.begin_replication(inst.service_id.name, url,
                                       copy_seconds=copy_seconds, now=now)

    def finish_data_replica(self, session, now=None):
        proxy = self._owner(session.service_id)
        released = proxy.finish_replication(session, now=now)
        inst = self.instance(session.destination)
        inst.state = SERVING
        self.journal.append({"op": "register", "service": session.service_id,
                             "url": session.destination, "tier": "data",
                             "proxy": proxy.proxy_id})
        return released

    # -- composition -------------------------------------------------------
    def has_serving(self, name) -> bool:
        rec = self.service(name)
        if rec.composition is None:
            return bool(self.serving(name))
        return all(self.has_serving(part) for part in rec.composition)

    def compose(self, upper, lower, *, composer=None, name=None) -> ServiceRecord:
        up, low = self.service(upper), self.service(lower)
        if up.input_schema != low.output_schema:
            raise SchemaMismatch(f"{up.name} expects {up.input_schema!r}, "
                                 f"{low.name} yields {low.output_schema!r}")
        for rec in (up, low):
            if not self.has_serving(rec.name):
                raise NoServingInstance(rec.name)
        composer = composer or self.operator
        name = name or f"{up.name}+{low.name}"
        sid = ServiceId(name, "composite")
        props = compose_properties(sid, composer, [up.properties, low.properties])
        rec = ServiceRecord(sid, props, composition=(up.name, low.name),
                            input_schema=low.input_schema, output_schema=up.output_schema)
        self.services[name] = rec
        self.journal.append({"op": "compose", "service": name, "upper": up.name,
                             "lower": low.name})
        if up.kind == "software" and low.kind == "data":
            self._bind(up.name, low.name)
        return rec

    def _bind(self, software, data):
        proxy = self._owner(data)
        binding = Binding(data, proxy.proxy_id, self.layer.assign_proxy(software))
        previous = self.bindings.get(software)
        self.bindings[software] = binding
        if previous is not None and previous != binding:
            self.invalidations.append((software, previous.data_service, data))
        self.journal.append({"op": "bind", "software": software, "data": data,
                             "proxy": proxy.proxy_id})

    def resolve_binding(self, software_service) -> tuple:
        try:
            b = self.bindings[str(software_service)]
        except KeyError:
            raise Unbound(f"{software_service} has no data binding") from None
        return b.data_service, b.proxy_id

    # -- retirement --------------------------------------------------------
    def deregister_instance(self, url) -> str:
        inst = self.instance(url)
        name = inst.service_id.name
        if inst.service_id.kind == "software":
            outcome = self.lb.deregister(name, url)
        else:
            outcome = self._owner(name).remove_data_instance(name, url)
        if inst.state != RETIRED:
            inst.state = DRAINING
        return outcome

    def abort_instance(self, url):
        """Undo a deployment that never finished joining its service (pipeline rollback)."""
        inst = self.instances.pop(url, None)
        if inst is None:
            return
        name = inst.service_id.name
        if inst.state == SERVING:
            if inst.service_id.kind == "software":
                self.lb.deregister(name, url)
            else:
                self._owner(name).remove_data_instance(name, url)
            self.journal.append({"op": "deregister", "service": name, "url": url})
        host = self.market.instance(inst.host)
        if url in host.hosted:
            host.hosted.remove(url)

    def _drained(self, service, url):
        inst = self.instances.get(url)
        if inst is None or inst.state == RETIRED:
            return
        inst.state = RETIRED
        host = self.market.instance(inst.host)
        if url in host.hosted:
            host.hosted.remove(url)
        self.journal.append({"op": "deregister", "service": str(service), "url": url})
        for listener in self.retired_listeners:
            listener(inst)

    # -- consistency -------------------------------------------------------
    def live_tables(self):
        """Current (service -> set of URLs) held by the balancer and the proxies."""
        tables = {}
        for service, entries in self.lb.table.items():
            for e in entries:
                tables.setdefault(service, set()).add(e.url)
        for proxy in self.layer.proxies.values():
            for service, c in proxy.clusters.items():
                for inst in c.instances:
                    if c.status[inst] != "pending":
                        tables.setdefault(service, set()).add(inst)
        return {k: v for k, v in tables.items() if v}

    def persisted_tables(self):
        instances, _ = replay_mapping(self.journal.entries)
        return {k: set(v) for k, v in instances.items() if v}


def _instance_url(kind, host, name):
    if kind == "software":
        return f"http://{host}:8080/{name}"
    return f"jdbc:mysql://{host}:3306/{name}"
