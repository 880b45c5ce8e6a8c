"""Resource-as-a-service: agreements, template matching and instance lifecycle."""

from __future__ import annotations

import ipaddress
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .core import ResourceInstanceProperties, TimeInterval, interval_intersect
from .errors import (AgreementExpired, AlreadyReleased, EmptyRentalPeriod, NoMatch,
                     NotFound, OutOfStock, ProviderUnknown, WrongState)

WILDCARD = "*"
NUMERIC_DIMS = ("cpu_ghz", "cpu_cores", "memory_gb", "disk_gb")

DELIVERED, CONFIGURED, ACTIVE, RELEASED = "delivered", "configured", "active", "released"


@dataclass(frozen=True)
class ResourceTemplate:
    cpu_ghz: float
    cpu_cores: int
    memory_gb: float
    disk_gb: float
    os: str = WILDCARD
    db: str = WILDCARD
    weights: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        for dim in NUMERIC_DIMS:
            if not getattr(self, dim) > 0:
                raise ValueError(f"{dim} must be > 0")
        if len(self.weights) != len(NUMERIC_DIMS):
            raise ValueError("one weight per numeric dimension required")
        if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
            raise ValueError("weights must be non-negative with at least one positive")

    def vector(self):
        return tuple(float(getattr(self, d)) for d in NUMERIC_DIMS)

    @property
    def capacity(self) -> float:
        """CPU work units per second."""
        return self.cpu_ghz * self.cpu_cores

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        w = d.pop("weights", None)
        if isinstance(w, dict):
            w = tuple(float(w.get(k, 1.0)) for k in NUMERIC_DIMS)
        elif w is not None:
            w = tuple(float(x) for x in w)
        return cls(cpu_ghz=float(d["cpu_ghz"]), cpu_cores=int(d["cpu_cores"]),
                   memory_gb=float(d["memory_gb"]), disk_gb=float(d["disk_gb"]),
                   os=str(d.get("os", WILDCARD)), db=str(d.get("db", WILDCARD)),
                   **({"weights": w} if w is not None else {}))


@dataclass
class ResourceOffer:
    offer_id: str
    label: str
    capacity: ResourceTemplate
    stock: int
    price_per_hour: float = 0.0
    provider: str = "provider"
    preconfigured: frozenset = frozenset()

    def __post_init__(self):
        if self.stock < 0:
            raise ValueError("stock must be >= 0")


@dataclass(frozen=True)
class Agreement:
    agreement_id: str
    subscriber: str
    provider: str
    rental_period: TimeInterval
    purpose: str = ""
    authority: tuple = ("start", "stop", "configure", "deploy")
    expense: str = ""


@dataclass
class ResourceInstance:
    instance_id: str
    offer_id: str
    agreement_id: str
    properties: ResourceInstanceProperties
    configured_env: set = field(default_factory=set)
    state: str = DELIVERED
    hosted: list = field(default_factory=list)
    release_reason: str | None = None

    @property
    def capacity(self) -> ResourceTemplate:
        return self.properties.capacity


@dataclass(frozen=True)
class Release:
    instance_id: str
    reason: str
    orphaned: tuple = ()


def _passes_filter(template, offer):
    cap = offer.capacity
    for attr in ("os", "db"):
        want = getattr(template, attr)
        if want != WILDCARD and getattr(cap, attr) != want:
            return False
    return True


def match_offer(template: ResourceTemplate, catalog: list[ResourceOffer]):
    """Rank catalog offers by weighted, range-normalized Euclidean distance.

    Symbolic attributes (os, db) filter; the four numeric dimensions are
    scaled by their spread over the surviving offers. Ties fall back to
    price, then offer id. Returns a list of ``(offer, distance)``.
    """
    if not catalog:
        raise NoMatch("empty catalog")
    pool = [o for o in catalog if _passes_filter(template, o)]
    if not pool:
        raise NoMatch("no offer satisfies os/db constraints")
    # exact rational arithmetic keeps ties exact and the order replayable
    vectors = [tuple(Fraction(x) for x in o.capacity.vector()) for o in pool]
    spans = []
    for i in range(len(NUMERIC_DIMS)):
        col = [v[i] for v in vectors]
        spread = max(col) - min(col)
        spans.append(spread if spread > 0 else Fraction(1))
    target = [Fraction(x) for x in template.vector()]
    weights = [Fraction(w) for w in template.weights]
    scored = []
    for offer, vec in zip(pool, vectors):
        sq = sum(w * ((t - o) / s) ** 2 for w, t, o, s in zip(weights, target, vec, spans))
        scored.append((sq, offer))
    scored.sort(key=lambda pair: (pair[0], pair[1].price_per_hour, pair[1].offer_id))
    return [(offer, math.sqrt(sq)) for sq, offer in scored]


class ResourceMarket:
    """Catalog, stock ledger, agreements and delivered instances."""

    def __init__(self, catalog: list[ResourceOffer], *, first_address="192.168.10.99"):
        self.offers = {o.offer_id: o for o in catalog}
        self.providers = {o.provider for o in catalog}
        self.agreements: dict[str, Agreement] = {}
        self.instances: dict[str, ResourceInstance] = {}
        self._initial_stock = {o.offer_id: o.stock for o in catalog}
        self._next_address = ipaddress.IPv4Address(first_address)
        self._next_agreement = 1

    @property
    def catalog(self):
        return list(self.offers.values())

    def negotiate(self, subscriber, provider, rental_period: TimeInterval, *,
                  purpose="", authority=None, expense="") -> Agreement:
        if provider not in self.providers:
            raise ProviderUnknown(provider)
        if rental_period.is_empty:
            raise EmptyRentalPeriod(f"{subscriber} <-> {provider}")
        agreement = Agreement(
            agreement_id=f"agr-{self._next_agreement:04d}", subscriber=subscriber,
            provider=provider, rental_period=rental_period, purpose=purpose,
            expense=expense,
            **({"authority": tuple(authority)} if authority is not None else {}))
        self._next_agreement += 1
        self.agreements[agreement.agreement_id] = agreement
        return agreement

    def subscribe(self, subscriber, template: ResourceTemplate, agreement: Agreement,
                  now: float = 0.0) -> ResourceInstance:
        if agreement.agreement_id not in self.agreements:
            raise NotFound(f"unknown agreement {agreement.agreement_id}")
        if subscriber != agreement.subscriber:
            raise PermissionError(f"{subscriber} is not party to {agreement.agreement_id}")
        if not agreement.rental_period.covers(now):
            raise AgreementExpired(f"{agreement.agreement_id} not valid at t={now}")
        catalog = [o for o in self.offers.values() if o.provider == agreement.provider]
        ranked = match_offer(template, catalog)
        for offer, _ in ranked:
            if offer.stock > 0:
                break
        else:
            raise OutOfStock(f"all {len(ranked)} matching offers exhausted")
        offer.stock -= 1
        address = str(self._next_address)
        self._next_address += 1
        availability = interval_intersect(
            TimeInterval(now, agreement.rental_period.end), agreement.rental_period)
        props = ResourceInstanceProperties(
            identifier=address, ownership=offer.provider, usufruct=subscriber,
            management=subscriber, availability=availability, capacity=offer.capacity,
            price=offer.price_per_hour)
        inst = ResourceInstance(instance_id=address, offer_id=offer.offer_id,
                                agreement_id=agreement.agreement_id, properties=props)
        if offer.preconfigured:
            inst.configured_env = set(offer.preconfigured)
            inst.state = CONFIGURED
        self.instances[address] = inst
        return inst

    def subscribe_many(self, subscriber, template, agreement, count, now=0.0):
        return [self.subscribe(subscriber, template, agreement, now) for _ in range(count)]

    def configure(self, instance: ResourceInstance, env) -> ResourceInstance:
        if instance.state == CONFIGURED and set(env) <= instance.configured_env:
            return instance
        if instance.state not in (DELIVERED, CONFIGURED):
            raise WrongState(f"{instance.instance_id} is {instance.state}")
        instance.configured_env |= set(env)
        instance.state = CONFIGURED
        return instance

    def activate(self, instance: ResourceInstance):
        if instance.state not in (CONFIGURED, ACTIVE):
            raise WrongState(f"{instance.instance_id} is {instance.state}")
        instance.state = ACTIVE

    def unsubscribe(self, instance: ResourceInstance, reason="subscriber") -> Release:
        if instance.state == RELEASED:
            raise AlreadyReleased(instance.instance_id)
        instance.state = RELEASED
        instance.release_reason = reason
        self.offers[instance.offer_id].stock += 1
        orphaned = tuple(instance.hosted)
        instance.hosted.clear()
        return Release(instance.instance_id, reason, orphaned)

    def expire(self, now: float) -> list[Release]:
        """Provider-side take-back of every instance whose agreement has ended."""
        released = []
        for inst in self.instances.values():
            if inst.state == RELEASED:
                continue
            if now >= self.agreements[inst.agreement_id].rental_period.end:
                released.append(self.unsubscribe(inst, reason="expiry"))
        return released

    def live_count(self, offer_id) -> int:
        return sum(1 for i in self.instances.values()
                   if i.offer_id == offer_id and i.state != RELEASED)

    def stock_conserved(self) -> bool:
        return all(self.offers[oid].stock + self.live_count(oid) == n
                   for oid, n in self._initial_stock.items())

    def instance(self, instance_id) -> ResourceInstance:
        try:
            return self.instances[instance_id]
        except KeyError:
            raise NotFound(f"no resource instance {instance_id!r}") from None


def offer_from_dict(d) -> ResourceOffer:
    cap = ResourceTemplate.from_dict(d)
    return ResourceOffer(offer_id=str(d["offer_id"]), label=str(d.get("label", d["offer_id"])),
                         capacity=cap, stock=int(d.get("stock", 1)),
                         price_per_hour=float(d.get("price_per_hour", 0.0)),
                         provider=str(d.get("provider", "provider")),
                         preconfigured=frozenset(d.get("preconfigured", ())))


def load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_catalog(path) -> list[ResourceOffer]:
    """Read ``[[offer]]`` tables from a TOML catalog file."""
    doc = load_toml(Path(path))
    return [offer_from_dict(o) for o in doc.get("offer", [])]


def load_template(path) -> ResourceTemplate:
    doc = load_toml(Path(path))
    return ResourceTemplate.from_dict(doc.get("template", doc))


def with_weights(template: ResourceTemplate, weights) -> ResourceTemplate:
    return replace(template, weights=tuple(weights))
