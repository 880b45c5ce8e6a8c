"""Software-service access point: identifier -> instance list, least-outstanding routing."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NoInstance, UnknownUrl

SERVING, DRAINING = "serving", "draining"


@dataclass
class LbEntry:
    url: str
    outstanding: int = 0
    state: str = SERVING
    routed: int = 0


class LoadBalancer:
    """Keeps one ordered URL list per service and redirects requests.

    ``on_drained(service_id, url)`` is called once a deregistered URL has no
    outstanding requests left and has been dropped from its list.
    """

    def __init__(self, on_drained=None):
        self.table: dict[str, list[LbEntry]] = {}
        self._cursor: dict[str, int] = {}
        self.on_drained = on_drained

    def register(self, service_id, url) -> list[str]:
        service_id = str(service_id)
        entries = self.table.get(service_id)
        if entries is None:
            self.table[service_id] = [LbEntry(url)]
            self._cursor[service_id] = 0
        elif not any(e.url == url for e in entries):
            entries.append(LbEntry(url))
        return self.urls(service_id)

    def urls(self, service_id, include_draining=True) -> list[str]:
        return [e.url for e in self.table.get(str(service_id), [])
                if include_draining or e.state == SERVING]

    def entry(self, service_id, url) -> LbEntry:
        for e in self.table.get(str(service_id), []):
            if e.url == url:
                return e
        raise UnknownUrl(f"{url} not registered for {service_id}")

    def route(self, service_id, request=None) -> str:
        service_id = str(service_id)
        entries = self.table.get(service_id, [])
        live = [i for i, e in enumerate(entries) if e.state == SERVING]
        if not live:
            raise NoInstance(f"no serving instance for {service_id}")
        low = min(entries[i].outstanding for i in live)
        tied = [i for i in live if entries[i].outstanding == low]
        # round-robin over the tied set, starting at the cursor
        start = self._cursor.get(service_id, 0)
        n = len(entries)
        chosen = min(tied, key=lambda i: (i - start) % n)
        self._cursor[service_id] = (chosen + 1) % n
        e = entries[chosen]
        e.outstanding += 1
        e.routed += 1
        return e.url

    def complete(self, service_id, url) -> bool:
        """Record a finished request; returns True if this completed a drain."""
        e = self.entry(service_id, url)
        if e.outstanding <= 0:
            raise ValueError(f"completion without outstanding request on {url}")
        e.outstanding -= 1
        if e.state == DRAINING and e.outstanding == 0:
            self._remove(str(service_id), url)
            return True
        return False

    def deregister(self, service_id, url) -> str:
        """Start removing ``url``; returns "removed" or "draining"."""
        e = self.entry(service_id, url)
        if e.outstanding == 0:
            self._remove(str(service_id), url)
            return "removed"
        e.state = DRAINING
        return "draining"

    def _remove(self, service_id, url):
        entries = self.table[service_id]
        idx = next(i for i, e in enumerate(entries) if e.url == url)
        del entries[idx]
        cur = self._cursor.get(service_id, 0)
        if idx < cur:
            cur -= 1
        self._cursor[service_id] = cur % len(entries) if entries else 0
        if self.on_drained is not None:
            self.on_drained(service_id, url)

    def outstanding_total(self) -> int:
        return sum(e.outstanding for entries in self.table.values() for e in entries)

    def snapshot(self, service_id) -> dict[str, int]:
        return {e.url: e.outstanding for e in self.table.get(str(service_id), [])}
