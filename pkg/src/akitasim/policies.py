"""Pluggable per-core dispatch policies.

The engine owns time, events, workload progress, and accounting of
executed intervals; a policy owns the runqueue discipline: replenishment,
dispatch choice, slice length, and (for the mixed-criticality policy) the
mode machine. Baselines: plain EDF periodic servers and a simplified
credit-style round robin with wake-up boost.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

from . import mcs
from .mcs import (
    HI,
    AdmissionResult,
    PCpuMode,
    UtilSummary,
    admission_test,
    compute_utilizations,
)

CREDIT_SLICE_US = 30_000


def utilization_only_test(specs) -> AdmissionResult:
    """Plain EDF capacity test: sum of optimistic utilizations <= 1."""
    u = compute_utilizations(specs)
    total = u.u1_1 + u.u2_1
    if total > 1:
        return AdmissionResult(
            accepted=False,
            utils=u,
            x=None,
            bound=None,
            reason=f"optimistic utilization {total} > 1",
        )
    return AdmissionResult(accepted=True, utils=u, x=None, bound=None)


class AkitaPolicy:
    """Mixed-criticality policy: EDF over virtual deadlines in LO mode,
    HI-only EDF over actual deadlines in HI mode, periodic servers with
    temperature-driven de-escalation."""

    name = "akita"
    uses_ticks = True
    placement_test = staticmethod(admission_test)

    def __init__(self, theta0: int):
        self.theta0 = theta0

    def replenish(self, v, now: int, pcpu) -> None:
        mcs.replenish(v, now, pcpu)

    def after_tick(self, pcpu, now: int) -> bool:
        """De-escalation check; returns True when the mode flipped to LO."""
        return mcs.maybe_switch_to_lo(pcpu)

    def escalations(self, pcpu, now: int):
        """Mark fresh pessimistic demands; yields (vcpu, mode_switched)."""
        for v in pcpu.vcpus:
            if (
                v.spec.criticality is HI
                and not v.demanded_pessimistic_this_period
                and mcs.check_hi_demand(v)
            ):
                mcs.mark_pessimistic_demand(v, self.theta0)
                switched = mcs.mode_switch_to_hi(pcpu, now)
                yield v, switched

    def enqueue(self, pcpu, v) -> None:
        mcs.enqueue(pcpu, v)

    def dequeue(self, pcpu, v) -> None:
        mcs.dequeue(pcpu, v)

    def requeue_repositioned(self, pcpu, v) -> None:
        mcs.dequeue(pcpu, v)
        mcs.enqueue(pcpu, v)

    def pick(self, pcpu, now: int):
        return mcs.pick_next(pcpu, now)

    def charge(self, v, ran_for: int) -> None:
        mcs.account(v, ran_for)

    def wake_preempts(self, pcpu, v, now: int) -> bool:
        """Would the newly runnable v displace the running vCPU?"""
        cur = pcpu.current
        if cur is None:
            return True
        if pcpu.mode is PCpuMode.HI:
            rank_v = _hi_mode_rank(v)
            rank_cur = _hi_mode_rank(cur)
        else:
            rank_v = 0 if v.active else 1
            rank_cur = 0 if cur.active else 1
        if rank_v != rank_cur:
            return rank_v < rank_cur
        # Equal rank: EDF, with ties going to the waiter (the runner
        # requeues behind its equal-deadline peers).
        return v.deadline <= cur.deadline


def _hi_mode_rank(v) -> int:
    hi = v.spec.criticality is HI
    return (0 if hi else 2) + (0 if v.active else 1)


class EdfPolicy:
    """Plain EDF periodic servers: every vCPU gets its optimistic budget
    and an actual deadline each period; no criticality, no modes."""

    name = "edf"
    uses_ticks = True
    placement_test = staticmethod(utilization_only_test)

    def __init__(self, theta0: int = 0):
        pass

    def replenish(self, v, now: int, pcpu) -> None:
        v.active = True
        v.executed_in_period = 0
        v.demanded_pessimistic_this_period = False
        v.period_start = now
        v.budget_remaining = v.spec.c_opt
        v.budget_at_replenish = v.spec.c_opt
        v.deadline = now + v.spec.period

    def after_tick(self, pcpu, now: int) -> bool:
        return False

    def escalations(self, pcpu, now: int):
        return ()

    enqueue = AkitaPolicy.enqueue
    dequeue = AkitaPolicy.dequeue
    requeue_repositioned = AkitaPolicy.requeue_repositioned

    def pick(self, pcpu, now: int):
        best_inactive = None
        for v in pcpu.runqueue:
            if not v.runnable:
                continue
            if v.active:
                return v, v.budget_remaining, False
            if best_inactive is None:
                best_inactive = v
        if best_inactive is not None:
            return best_inactive, mcs.next_tick(pcpu, now) - now, True
        return None

    def charge(self, v, ran_for: int) -> None:
        mcs.account(v, ran_for)

    def wake_preempts(self, pcpu, v, now: int) -> bool:
        cur = pcpu.current
        if cur is None:
            return True
        rank_v = 0 if v.active else 1
        rank_cur = 0 if cur.active else 1
        if rank_v != rank_cur:
            return rank_v < rank_cur
        return v.deadline <= cur.deadline


class CreditPolicy:
    """Simplified credit scheduler: a single round-robin queue per core
    with a 30 ms slice and a one-shot boost that puts a vCPU waking from
    idle at the queue head. Wake-ups do not preempt the running vCPU."""

    name = "credit"
    uses_ticks = False
    placement_test = staticmethod(utilization_only_test)

    def __init__(self, theta0: int = 0):
        self.queues: dict[int, deque] = {}

    def queue_for(self, pcpu) -> deque:
        q = self.queues.get(pcpu.id)
        if q is None:
            q = self.queues[pcpu.id] = deque()
        return q

    def replenish(self, v, now: int, pcpu) -> None:  # pragma: no cover
        raise RuntimeError("credit policy has no replenishment ticks")

    def after_tick(self, pcpu, now: int) -> bool:  # pragma: no cover
        return False

    def escalations(self, pcpu, now: int):
        return ()

    def enqueue(self, pcpu, v) -> None:
        # Initial population and slice-expiry requeue both go to the tail;
        # boost insertion happens in wake_preempts' caller via boost().
        if v.runnable:
            self.queue_for(pcpu).append(v)

    def dequeue(self, pcpu, v) -> None:
        self.queue_for(pcpu).remove(v)

    def requeue_repositioned(self, pcpu, v) -> None:
        pass

    def boost(self, pcpu, v) -> None:
        self.queue_for(pcpu).appendleft(v)

    def pick(self, pcpu, now: int):
        q = self.queue_for(pcpu)
        if not q:
            return None
        return q[0], CREDIT_SLICE_US, False

    def charge(self, v, ran_for: int) -> None:
        v.executed_in_period += ran_for

    def wake_preempts(self, pcpu, v, now: int) -> bool:
        # Boost places the waker at the head but never interrupts the
        # current slice.
        return pcpu.current is None


def make_policy(name: str, theta0: int):
    if name == "akita":
        return AkitaPolicy(theta0)
    if name == "edf":
        return EdfPolicy()
    if name == "credit":
        return CreditPolicy()
    raise ValueError(f"unknown policy {name!r}")
