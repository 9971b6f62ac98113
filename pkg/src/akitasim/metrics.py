"""Trace post-processing: percentiles, CPU shares, misses, idle statistics."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .trace import Trace

WINDOW_US = 1_000_000


def percentile(samples, p: Union[float, Fraction, str]) -> int:
    """Nearest-rank percentile: the ceil(p*n)-th smallest sample.

    No interpolation, so results are reproducible across platforms. The
    rank is computed in exact rational arithmetic to keep boundary cases
    (e.g. p=0.99 over 10^4 samples) away from float rounding.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("percentile of empty sample set")
    frac = Fraction(p)
    if not (0 < frac <= 1):
        raise ValueError(f"p must be in (0, 1], got {p}")
    k = math.ceil(frac * n)
    arr = np.asarray(samples)
    return int(np.partition(arr, k - 1)[k - 1])


def _intervals_from_records(trace: Trace):
    """Per-VM execution intervals reconstructed from dispatch/deschedule
    record pairs."""
    open_by_pcpu: dict = {}
    for rec in trace.records:
        kind = rec[2]
        if kind == "dispatch":
            open_by_pcpu[rec[1]] = (rec[4], rec[0])
        elif kind == "deschedule":
            started = open_by_pcpu.pop(rec[1], None)
            if started is None:
                continue
            vm, t0 = started
            yield vm, t0, rec[0]
    for pcpu, (vm, t0) in open_by_pcpu.items():
        yield vm, t0, trace.horizon_us


def cpu_shares(
    trace: Trace, window_us: int = WINDOW_US
) -> dict[str, list[Fraction]]:
    """Window-averaged executed-time fraction per VM.

    Uses exact execution intervals when trace records are present,
    otherwise the engine's built-in fixed-window aggregates. The final
    partial window is normalized by its actual span.
    """
    if window_us <= 0:
        raise ValueError("window must be positive")
    horizon = trace.horizon_us
    nwin = (horizon + window_us - 1) // window_us

    def span(w: int) -> int:
        return min(window_us, horizon - w * window_us)

    executed = {vm.name: [0] * nwin for vm in trace.vms}
    if trace.records is not None:
        for vm, t0, t1 in _intervals_from_records(trace):
            if vm not in executed:
                continue
            buckets = executed[vm]
            while t0 < t1:
                w = t0 // window_us
                end = min(t1, (w + 1) * window_us)
                buckets[w] += end - t0
                t0 = end
    elif window_us == trace.window_us:
        for vm in trace.vms:
            for w, us in enumerate(vm.window_exec_us):
                executed[vm.name][w] += us
    else:
        raise ValueError(
            "run kept no trace records; only the built-in "
            f"{trace.window_us} us window is available"
        )
    return {
        name: [Fraction(buckets[w], span(w)) for w in range(nwin)]
        for name, buckets in executed.items()
    }


def deadline_misses(trace: Trace) -> dict[str, int]:
    """Per-VM deadline-miss counts.

    A vCPU misses its period when budget stayed unused, work was still
    pending at the period end, and the vCPU spent at least the unused
    budget runnable-but-denied. Only budgeted policies (akita, edf)
    produce misses; the credit baseline has no periods.
    """
    return {vm.name: vm.deadline_misses for vm in trace.vms}


def idle_stats(trace: Trace) -> dict:
    """Per-pCPU idle fractions plus placement-level idle core count."""
    per_pcpu = {
        p.pcpu_id: Fraction(p.idle_us, trace.horizon_us) for p in trace.pcpus
    }
    return {
        "per_pcpu_idle_fraction": per_pcpu,
        "used_cores": trace.used_cores,
        "placement_idle_cores": trace.placement_idle_cores,
    }


def frac6(x: Union[Fraction, float]) -> str:
    """Fixed 6-decimal rendering with exact half-up rounding."""
    scaled = Fraction(x) * 10**6
    q, r = divmod(scaled.numerator, scaled.denominator)
    if 2 * r >= scaled.denominator:
        q += 1
    return f"{q // 10**6}.{q % 10**6:06d}"


TAIL_POINTS = (("p50", 0.5), ("p95", 0.95), ("p99", 0.99), ("p999", 0.999))


def _rtt_block(samples: np.ndarray) -> Optional[dict]:
    if len(samples) == 0:
        return None
    block = {"mean_us": int(samples.sum()) // len(samples)}
    for name, p in TAIL_POINTS:
        block[f"{name}_us"] = percentile(samples, Fraction(str(p)))
    block["max_us"] = int(samples.max())
    return block


def summarize(trace: Trace) -> dict:
    """Full summary of one run, ready for fixed-precision serialization.

    Durations are integer microseconds; fractions are 6-decimal strings.
    """
    shares = cpu_shares(trace, trace.window_us)
    vms = {}
    for vm in trace.vms:
        series = shares[vm.name]
        entry = {
            "vm_id": vm.vm_id,
            "requests": {
                "arrived": vm.arrived,
                "completed": vm.completed,
                "in_flight": vm.arrived - vm.completed,
            },
            "rtt": _rtt_block(vm.rtt_us),
            "cal_p99_us": (
                percentile(vm.cal_us, Fraction(99, 100))
                if len(vm.cal_us)
                else None
            ),
            "deadline_misses": vm.deadline_misses,
            "executed_us": vm.executed_us,
            "execution_time_us": vm.execution_time_us,
            "cpu_share": {
                "window_us": trace.window_us,
                "series": [frac6(s) for s in series],
            },
        }
        vms[vm.name] = entry
    pcpus = {}
    for p in trace.pcpus:
        pcpus[str(p.pcpu_id)] = {
            "exec_us": p.exec_us,
            "idle_us": p.idle_us,
            "idle_fraction": frac6(Fraction(p.idle_us, trace.horizon_us)),
            "mode_switches": p.mode_switches,
            "hi_mode_fraction": frac6(
                Fraction(p.hi_mode_us, trace.horizon_us)
            ),
        }
    return {
        "policy": trace.policy,
        "seed": trace.seed,
        "horizon_us": trace.horizon_us,
        "theta0": trace.theta0,
        "num_pcpus": trace.num_pcpus,
        "used_cores": trace.used_cores,
        "placement_idle_cores": trace.placement_idle_cores,
        "assignments": {str(k): v for k, v in sorted(trace.assignments.items())},
        "vms": vms,
        "pcpus": pcpus,
    }
