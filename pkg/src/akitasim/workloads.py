"""Workload specifications and their runtime demand models.

Workload specs are declarative (what a scenario file states); the engine
instantiates one runtime model per vCPU. All models share a small
interface: whether the guest has pending work at a given time, how long a
continuous run would stay busy, and committing an executed interval.

Request arrivals are pregenerated from a seeded PCG64 generator
(`numpy.random.default_rng`), which keeps workload generation fully
independent of scheduling decisions: every policy sees bit-identical
arrival streams for the same scenario seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

DEFAULT_SERVICE_TIME_US = 46


@dataclass(frozen=True)
class PoissonRequests:
    """Open-loop RPC load: `connections` clients, each a Poisson source."""

    connections: int
    rate_per_connection: float
    service_time: int = DEFAULT_SERVICE_TIME_US
    seed: Optional[int] = None

    def validate(self) -> None:
        if self.connections <= 0:
            raise ValueError("connections must be positive")
        if self.rate_per_connection <= 0:
            raise ValueError("rate_per_connection must be positive")
        if self.service_time <= 0:
            raise ValueError("service_time must be positive")


@dataclass(frozen=True)
class DutyCycleCpu:
    """CPU hog demanding `utilization * window` of work at each window start.

    Unfinished demand is discarded at the next window boundary; a hog that
    never catches up is simply runnable the whole time.
    """

    utilization: float
    window: int = 100_000

    def validate(self) -> None:
        if not (0 <= self.utilization <= 1):
            raise ValueError("utilization must be in [0, 1]")
        if self.window <= 0:
            raise ValueError("window must be positive")


@dataclass(frozen=True)
class FiniteWork:
    """A fixed amount of CPU work; completion time is the metric."""

    total_work: int

    def validate(self) -> None:
        if self.total_work <= 0:
            raise ValueError("total_work must be positive")


@dataclass(frozen=True)
class PhasedCpu:
    """Duty-cycle demand whose utilization steps at phase boundaries."""

    phases: tuple[tuple[int, float], ...]
    window: int = 10_000

    def validate(self) -> None:
        if not self.phases:
            raise ValueError("phases must be non-empty")
        last = -1
        for start, util in self.phases:
            if start <= last:
                raise ValueError("phases must be time-ordered and non-overlapping")
            if not (0 <= util <= 1):
                raise ValueError("utilization must be in [0, 1]")
            last = start
        if self.window <= 0:
            raise ValueError("window must be positive")


WorkloadSpec = Union[PoissonRequests, DutyCycleCpu, FiniteWork, PhasedCpu]


def poisson_arrivals(
    rate: float, seed, horizon_us: int
) -> np.ndarray:
    """Strictly increasing arrival timestamps (int64 us) of a Poisson
    process over [0, horizon_us).

    Gaps are i.i.d. exponential with mean 1/rate, drawn from PCG64.
    Timestamps are floored to the microsecond tick; collisions after
    rounding are pushed forward by +1 us so every stream stays strictly
    increasing and traces remain reproducible.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if horizon_us <= 0:
        return np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    scale_us = 1e6 / rate
    expected = horizon_us / scale_us
    chunk = max(64, int(expected + 6 * expected**0.5 + 16))
    times = np.cumsum(rng.exponential(scale_us, size=chunk))
    while times[-1] < horizon_us:
        more = np.cumsum(rng.exponential(scale_us, size=chunk)) + times[-1]
        times = np.concatenate([times, more])
    stamps = np.floor(times).astype(np.int64)
    # Minimal forward shift making the sequence strictly increasing:
    # s'_i = max(s_i, s'_{i-1} + 1), vectorized.
    idx = np.arange(len(stamps), dtype=np.int64)
    stamps = np.maximum.accumulate(stamps - idx) + idx
    return stamps[stamps < horizon_us]


class RequestStream:
    """FIFO request queue fed by a pregenerated arrival stream.

    The vCPU is runnable iff the queue is non-empty; each request consumes
    `service_time` of execution. Requests are preemptible between
    microsecond ticks and resume with their remaining demand. Dispatch
    stamps record the first vCPU execution at or after each arrival (the
    CPU-access-latency sample), completion stamps the service finish.
    """

    kind = "poisson"

    def __init__(self, spec: PoissonRequests, seed, horizon_us: int):
        self.spec = spec
        rate = spec.connections * spec.rate_per_connection
        self.arrivals = poisson_arrivals(rate, seed, horizon_us)
        self.service = spec.service_time
        n = len(self.arrivals)
        self.dispatch = np.full(n, -1, dtype=np.int64)
        self.completion = np.full(n, -1, dtype=np.int64)
        self.served_idx = 0
        self.dispatch_idx = 0
        self.partial_remaining = 0

    def runnable(self, now: int) -> bool:
        i = self.served_idx
        return i < len(self.arrivals) and int(self.arrivals[i]) <= now

    def next_arrival(self, idx: int) -> Optional[int]:
        if idx < len(self.arrivals):
            return int(self.arrivals[idx])
        return None

    def next_wake(self, now: int) -> Optional[int]:
        """Next arrival that would make an idle vCPU runnable."""
        i = self.served_idx
        if i < len(self.arrivals):
            return max(now, int(self.arrivals[i]))
        return None

    def busy_until(self, now: int, limit: int) -> int:
        """Time at which continuous execution from `now` runs dry, capped
        at `limit`. Looks ahead into the pregenerated arrival stream."""
        arr = self.arrivals
        n = len(arr)
        i = self.served_idx
        cursor = now
        rem = self.partial_remaining
        while cursor < limit and i < n and int(arr[i]) <= cursor:
            cursor += rem if rem else self.service
            rem = 0
            i += 1
        return min(cursor, limit)

    def consume(self, t0: int, t1: int) -> int:
        """Commit execution over [t0, t1); returns requests completed."""
        arr = self.arrivals
        n = len(arr)
        disp = self.dispatch
        i = self.dispatch_idx
        while i < n:
            a = int(arr[i])
            if a >= t1:
                break
            disp[i] = a if a >= t0 else t0
            i += 1
        self.dispatch_idx = i

        comp = self.completion
        i = self.served_idx
        rem = self.partial_remaining
        cursor = t0
        done = 0
        while cursor < t1 and i < n and int(arr[i]) <= cursor:
            need = rem if rem else self.service
            take = min(need, t1 - cursor)
            cursor += take
            if take == need:
                comp[i] = cursor
                i += 1
                rem = 0
                done += 1
            else:
                rem = need - take
        self.served_idx = i
        self.partial_remaining = rem
        return done

    # -- end-of-run reporting ------------------------------------------

    def arrived_count(self) -> int:
        return len(self.arrivals)

    def completed_count(self) -> int:
        if self.partial_remaining:
            return self.served_idx
        return self.served_idx

    def rtt_samples(self) -> np.ndarray:
        n = self.served_idx
        return (self.completion[:n] - self.arrivals[:n]).astype(np.int64)

    def cal_samples(self) -> np.ndarray:
        n = self.dispatch_idx
        return (self.dispatch[:n] - self.arrivals[:n]).astype(np.int64)


class DutyCycleWork:
    kind = "duty_cycle"

    def __init__(self, spec: DutyCycleCpu, horizon_us: int):
        self.spec = spec
        self.window = spec.window
        self.quantum = int(round(spec.utilization * spec.window))
        self.remaining = self.quantum
        self.horizon = horizon_us

    def runnable(self, now: int) -> bool:
        return self.remaining > 0

    def next_wake(self, now: int) -> Optional[int]:
        if self.remaining > 0:
            return now
        if self.quantum == 0:
            return None
        return (now // self.window + 1) * self.window

    def next_boundary(self, now: int) -> Optional[int]:
        nxt = (now // self.window + 1) * self.window
        return nxt if nxt < self.horizon else None

    def on_boundary(self, now: int) -> None:
        # Leftover demand is dropped; each window starts fresh.
        self.remaining = self._quantum_at(now)

    def _quantum_at(self, now: int) -> int:
        return self.quantum

    def busy_until(self, now: int, limit: int) -> int:
        return min(now + self.remaining, limit)

    def consume(self, t0: int, t1: int) -> int:
        ran = t1 - t0
        if ran > self.remaining:
            raise RuntimeError("duty-cycle vCPU ran past its demand")
        self.remaining -= ran
        return 0


class PhasedWork(DutyCycleWork):
    kind = "phased"

    def __init__(self, spec: PhasedCpu, horizon_us: int):
        self.spec = spec
        self.window = spec.window
        self.phases = list(spec.phases)
        self.horizon = horizon_us
        self.remaining = self._quantum_at(0)

    def _utilization_at(self, now: int) -> float:
        util = 0.0
        for start, u in self.phases:
            if start <= now:
                util = u
            else:
                break
        return util

    def _quantum_at(self, now: int) -> int:
        return int(round(self._utilization_at(now) * self.window))

    def next_wake(self, now: int) -> Optional[int]:
        if self.remaining > 0:
            return now
        return (now // self.window + 1) * self.window


class FiniteWorkModel:
    kind = "finite"

    def __init__(self, spec: FiniteWork, horizon_us: int):
        self.spec = spec
        self.remaining = spec.total_work
        self.completed_at: Optional[int] = None

    def runnable(self, now: int) -> bool:
        return self.remaining > 0

    def next_wake(self, now: int) -> Optional[int]:
        return now if self.remaining > 0 else None

    def next_boundary(self, now: int) -> Optional[int]:
        return None

    def on_boundary(self, now: int) -> None:  # pragma: no cover
        pass

    def busy_until(self, now: int, limit: int) -> int:
        return min(now + self.remaining, limit)

    def consume(self, t0: int, t1: int) -> int:
        ran = t1 - t0
        if ran > self.remaining:
            raise RuntimeError("finite-work vCPU ran past its demand")
        self.remaining -= ran
        if self.remaining == 0 and self.completed_at is None:
            self.completed_at = t1
        return 0


def build_model(spec: WorkloadSpec, seed, horizon_us: int):
    """Instantiate the runtime demand model for one vCPU."""
    spec.validate()
    if isinstance(spec, PoissonRequests):
        return RequestStream(spec, spec.seed if spec.seed is not None else seed,
                             horizon_us)
    if isinstance(spec, DutyCycleCpu):
        return DutyCycleWork(spec, horizon_us)
    if isinstance(spec, PhasedCpu):
        return PhasedWork(spec, horizon_us)
    if isinstance(spec, FiniteWork):
        return FiniteWorkModel(spec, horizon_us)
    raise TypeError(f"unknown workload spec {spec!r}")
