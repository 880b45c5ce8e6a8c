"""Fluid processor-sharing host model.

With ``k`` jobs active on a host of capacity ``C`` work units/second, each job
progresses at ``C / k``. The host keeps a cumulative busy-time counter so the
host monitor can report the busy fraction of each sampling period as
``cpu_pct``.
"""

from __future__ import annotations

import bisect

EPS = 1e-9


class SimHost:
    def __init__(self, sim, instance_id, capacity, *, base_memory_mb=200.0,
                 memory_per_job_mb=10.0, disk_gb=20.0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.sim = sim
        self.instance_id = instance_id
        self.capacity = capacity
        self.base_memory_mb = base_memory_mb
        self.memory_per_job_mb = memory_per_job_mb
        self.disk_gb = disk_gb
        self.jobs: dict[object, list] = {}  # job id -> [remaining work, on_done]
        self._last = sim.now
        self._busy = 0.0
        self._version = 0
        # (time, cumulative busy) breakpoints for windowed utilization queries
        self._marks_t = [sim.now]
        self._marks_b = [0.0]
        self.completed = 0

    def __repr__(self):
        return f"SimHost({self.instance_id}, C={self.capacity}, jobs={len(self.jobs)})"

    def _advance(self):
        now = self.sim.now
        dt = now - self._last
        if dt > 0:
            if self.jobs:
                share = self.capacity * dt / len(self.jobs)
                for job in self.jobs.values():
                    job[0] -= share
                self._busy += dt
            self._last = now
        if self._marks_t[-1] != now:
            self._marks_t.append(now)
            self._marks_b.append(self._busy)
        else:
            self._marks_b[-1] = self._busy

    def submit(self, job_id, demand, on_done):
        """Start a job needing ``demand`` work units; ``on_done(job_id)`` fires at completion."""
        if demand <= 0:
            raise ValueError("demand must be positive")
        self._advance()
        self.jobs[job_id] = [float(demand), on_done]
        self._reschedule()

    def _reschedule(self):
        self._version += 1
        if not self.jobs:
            return
        rem = min(j[0] for j in self.jobs.values())
        delay = max(0.0, rem * len(self.jobs) / self.capacity)
        self.sim.schedule(delay, self._on_completion, self._version,
                          target=f"host:{self.instance_id}")

    def _on_completion(self, version):
        if version != self._version:
            return
        self._advance()
        rem = min(j[0] for j in self.jobs.values())
        done = [jid for jid, j in self.jobs.items() if j[0] <= rem + EPS]
        callbacks = []
        for jid in done:
            _, cb = self.jobs.pop(jid)
            callbacks.append((jid, cb))
        self.completed += len(done)
        self._reschedule()
        for jid, cb in callbacks:
            cb(jid)

    def busy_time(self, t=None) -> float:
        """Cumulative busy seconds up to time ``t`` (default: now)."""
        self._advance()
        if t is None or t >= self.sim.now:
            return self._busy
        i = bisect.bisect_right(self._marks_t, t) - 1
        if i < 0:
            return 0.0
        t0, b0 = self._marks_t[i], self._marks_b[i]
        # the final mark is always "now", so a successor exists; between marks
        # the host is either busy or idle throughout
        b1 = self._marks_b[i + 1]
        return b0 + (t - t0) if b1 > b0 else b0

    def utilization(self, start, end) -> float:
        """Busy fraction over ``[start, end]``."""
        if end <= start:
            return 1.0 if self.jobs else 0.0
        busy = self.busy_time(end) - self.busy_time(start)
        return min(1.0, max(0.0, busy / (end - start)))

    def cpu_pct(self, period) -> float:
        now = self.sim.now
        return 100.0 * self.utilization(max(0.0, now - period), now)

    def memory_used(self) -> float:
        return self.base_memory_mb + self.memory_per_job_mb * len(self.jobs)

    def prune(self, before):
        """Forget utilization breakpoints older than ``before``."""
        i = bisect.bisect_right(self._marks_t, before) - 1
        if i > 0:
            del self._marks_t[:i]
            del self._marks_b[:i]


def ps_completion_delay(remaining, demand, capacity) -> float:
    """Delay until a new job of ``demand`` finishes, given the other jobs' remaining work.

    Assumes no further arrivals. Jobs leave in order of remaining work; between
    departures every job progresses at ``capacity / k``.
    """
    if demand <= 0:
        raise ValueError("demand must be positive")
    others = sorted(r for r in remaining if r < demand)
    elapsed = 0.0
    done = 0.0  # work already received by every still-active job
    k = len(remaining) + 1
    for r in others:
        elapsed += (r - done) * k / capacity
        done = r
        k -= 1
    return elapsed + (demand - done) * k / capacity


def service_time(host: SimHost, demand) -> float:
    """Completion delay for a job of ``demand`` admitted to ``host`` right now."""
    host._advance()
    return ps_completion_delay([j[0] for j in host.jobs.values()], demand, host.capacity)
