"""Value types shared across the platform: identifiers, intervals, property tables.

Times are simulated seconds from scenario start. Intervals are half-open in
spirit but compared as closed ranges; a zero-length interval is empty and is
always stored as ``TimeInterval(0, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Iterable

SERVICE_KINDS = ("data", "software", "composite")

# Trace rendering only; simulation time itself is relative.
EPOCH = datetime(2011, 3, 16, 15, 0, 0)


def render_timestamp(seconds: float) -> str:
    return (EPOCH + timedelta(seconds=seconds)).strftime("%Y-%m-%d %H:%M:%S")


@dataclass(frozen=True, order=True)
class ServiceId:
    name: str
    kind: str = "software"

    def __post_init__(self):
        if not self.name:
            raise ValueError("service name must be non-empty")
        if self.kind not in SERVICE_KINDS:
            raise ValueError(f"unknown service kind {self.kind!r}")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class TimeInterval:
    start: float = 0.0
    end: float = 0.0

    def __post_init__(self):
        if self.end <= self.start:
            object.__setattr__(self, "start", 0.0)
            object.__setattr__(self, "end", 0.0)

    @classmethod
    def empty(cls) -> "TimeInterval":
        return cls(0.0, 0.0)

    @classmethod
    def forever(cls) -> "TimeInterval":
        return cls(0.0, math.inf)

    @property
    def is_empty(self) -> bool:
        return self.start == self.end

    @property
    def length(self) -> float:
        return self.end - self.start

    def contains(self, other: "TimeInterval") -> bool:
        """True when ``other`` is a subset of this interval."""
        if other.is_empty:
            return True
        if self.is_empty:
            return False
        return self.start <= other.start and other.end <= self.end

    def covers(self, t: float) -> bool:
        return not self.is_empty and self.start <= t < self.end

    def to_list(self):
        return [self.start, self.end]


def interval_intersect(a: TimeInterval, b: TimeInterval) -> TimeInterval:
    if a.is_empty or b.is_empty:
        return TimeInterval.empty()
    return TimeInterval(max(a.start, b.start), min(a.end, b.end))


def intersect_all(intervals: Iterable[TimeInterval]) -> TimeInterval:
    result = TimeInterval.forever()
    for iv in intervals:
        result = interval_intersect(result, iv)
    return result


@dataclass(frozen=True)
class ServiceProperties:
    identifier: ServiceId
    ownership: str
    management: str
    usufruct: frozenset = frozenset()
    availability: TimeInterval = field(default_factory=TimeInterval.forever)
    performance: tuple = (0.0, 0.0)  # response-time interval, seconds
    scalability: int = 1
    price: float = 0.0


@dataclass(frozen=True)
class ResourceInstanceProperties:
    identifier: str
    ownership: str
    usufruct: str
    management: str
    availability: TimeInterval
    capacity: object  # ResourceTemplate; typed loosely to avoid an import cycle
    price: float = 0.0
    connectivity: bool = True


def validate_properties(p: ServiceProperties) -> list[str]:
    """Return every violated invariant of ``p``; an empty list means valid."""
    problems = []
    lo, hi = p.performance
    if lo < 0:
        problems.append("negative performance bound")
    if lo > hi:
        problems.append("performance.lo > hi")
    if not isinstance(p.scalability, int) or p.scalability < 1:
        problems.append("scalability < 1")
    if p.price < 0:
        problems.append("negative price")
    if not p.ownership:
        problems.append("missing ownership")
    if not p.management:
        problems.append("missing management")
    return problems


def compose_properties(identifier: ServiceId, composer: str,
                       parts: list[ServiceProperties]) -> ServiceProperties:
    """Derive a composite's properties from its direct components.

    Availability is the intersection, price the sum, scalability the minimum
    and the response-time interval the element-wise sum (requests flow
    through the parts serially).
    """
    usufruct = frozenset().union(*(p.usufruct for p in parts))
    return ServiceProperties(
        identifier=identifier,
        ownership=composer,
        management=composer,
        usufruct=usufruct,
        availability=intersect_all(p.availability for p in parts),
        performance=(sum(p.performance[0] for p in parts),
                     sum(p.performance[1] for p in parts)),
        scalability=min(p.scalability for p in parts),
        price=sum(p.price for p in parts),
    )


def restrict_availability(p: ServiceProperties, window: TimeInterval) -> ServiceProperties:
    return replace(p, availability=interval_intersect(p.availability, window))
