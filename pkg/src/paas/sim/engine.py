"""Single-threaded discrete-event loop with a total (time, sequence) order."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field


@dataclass(order=True)
class SimEvent:
    timestamp: float
    seq: int
    target: str = field(compare=False)
    callback: object = field(compare=False, repr=False)
    payload: tuple = field(compare=False, default=())
    cancelled: bool = field(compare=False, default=False)


class Simulator:
    def __init__(self):
        self.now = 0.0
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self.processed = 0

    def at(self, time, callback, *payload, target="sim") -> SimEvent:
        if time < self.now:
            raise ValueError(f"cannot schedule in the past ({time} < {self.now})")
        ev = SimEvent(time, next(self._seq), target, callback, payload)
        heapq.heappush(self._queue, ev)
        return ev

    def schedule(self, delay, callback, *payload, target="sim") -> SimEvent:
        return self.at(self.now + delay, callback, *payload, target=target)

    def process(self, gen, on_error=None, on_done=None, target="process"):
        """Drive a generator that yields delays; resumes it after each delay."""

        def resume():
            try:
                delay = next(gen)
            except StopIteration as stop:
                if on_done is not None:
                    on_done(stop.value)
                return
            except Exception as exc:
                if on_error is None:
                    raise
                on_error(exc)
                return
            self.schedule(delay, resume, target=target)

        resume()

    def peek(self):
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].timestamp if self._queue else None

    def run(self, until=None):
        while self._queue:
            ev = self._queue[0]
            if ev.cancelled:
                heapq.heappop(self._queue)
                continue
            if until is not None and ev.timestamp > until:
                break
            heapq.heappop(self._queue)
            self.now = ev.timestamp
            self.processed += 1
            ev.callback(*ev.payload)
        if until is not None:
            self.now = max(self.now, until)
