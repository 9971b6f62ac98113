"""Mixed-criticality scheduling core.

Implements the per-core scheduling state machine used by the simulator:
periodic-server budget accounting, EDF with virtual deadlines for
high-criticality vCPUs, the LO/HI per-core mode machine driven by vCPU
temperatures, and the utilization-based admission test.

Everything here is a pure state machine over integer-microsecond time.
Utilizations and the deadline-scaling factor are exact `Fraction`s; floats
appear only at reporting boundaries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional


class SpecError(ValueError):
    """A vCPU specification violates its invariants.

    `field_name` names the offending field so rejections can be reported
    precisely.
    """

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class InfeasibleError(ValueError):
    """The LO-criticality utilization alone saturates the core."""


class SchedulingInvariantError(RuntimeError):
    """An internal scheduling-state invariant was broken (simulator bug)."""


class CriticalityLevel(enum.Enum):
    LO = "LO"
    HI = "HI"


LO = CriticalityLevel.LO
HI = CriticalityLevel.HI


class PCpuMode(enum.Enum):
    LO = "LO"
    HI = "HI"


@dataclass(frozen=True)
class VCpuSpec:
    """Static contract of a vCPU: budgets (us), period (us), criticality.

    HI vCPUs carry both an optimistic and a pessimistic budget; LO vCPUs
    only an optimistic one.
    """

    id: int
    vm_id: int
    c_opt: int
    period: int
    criticality: CriticalityLevel
    c_pes: Optional[int] = None

    def validate(self) -> "VCpuSpec":
        if self.c_opt <= 0:
            raise SpecError("c_opt", f"must be positive, got {self.c_opt}")
        if self.period <= 0:
            raise SpecError("period", f"must be positive, got {self.period}")
        if self.c_opt > self.period:
            raise SpecError(
                "c_opt", f"must not exceed period ({self.c_opt} > {self.period})"
            )
        if self.criticality is HI:
            if self.c_pes is None:
                raise SpecError("c_pes", "HI vCPU requires a pessimistic budget")
            if not (self.c_opt <= self.c_pes <= self.period):
                raise SpecError(
                    "c_pes",
                    f"must satisfy c_opt <= c_pes <= period, got {self.c_pes}",
                )
        elif self.c_pes is not None:
            raise SpecError("c_pes", "LO vCPU must not have a pessimistic budget")
        return self

    @property
    def u_opt(self) -> Fraction:
        return Fraction(self.c_opt, self.period)

    @property
    def u_pes(self) -> Fraction:
        assert self.c_pes is not None
        return Fraction(self.c_pes, self.period)


@dataclass(kw_only=True)
class VCpuRuntime:
    """Dynamic scheduler state of one vCPU (a periodic server)."""

    spec: VCpuSpec
    budget_remaining: int = 0
    deadline: int = 0
    period_start: int = 0
    executed_in_period: int = 0
    budget_at_replenish: int = 0
    active: bool = False
    runnable: bool = False
    temperature: int = 0
    demanded_pessimistic_this_period: bool = False
    # Timestamp of the last deschedule; rotates equal-deadline peers so
    # none of them can monopolize work-conserving slack.
    last_descheduled: int = 0

    @property
    def vcpu_id(self) -> int:
        return self.spec.id


@dataclass(kw_only=True)
class PCpuState:
    """Per-core scheduling state: mode, ordered runqueue, current dispatch."""

    id: int
    mode: PCpuMode = PCpuMode.LO
    runqueue: list[VCpuRuntime] = field(default_factory=list)
    vcpus: list[VCpuRuntime] = field(default_factory=list)
    current: Optional[VCpuRuntime] = None
    slice_end: Optional[int] = None
    x_factor: Fraction = Fraction(0)


@dataclass(frozen=True)
class UtilSummary:
    """Utilization sums of a vCPU set, split by criticality and budget.

    u1_1: LO vCPUs at optimistic budgets; u2_1: HI vCPUs at optimistic
    budgets; u2_2: HI vCPUs at pessimistic budgets.
    """

    u1_1: Fraction
    u2_1: Fraction
    u2_2: Fraction


@dataclass(frozen=True)
class AdmissionResult:
    accepted: bool
    utils: UtilSummary
    x: Optional[Fraction]
    # x * u1_1 + u2_2, defined whenever x is.
    bound: Optional[Fraction]
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.accepted


def compute_utilizations(specs: list[VCpuSpec]) -> UtilSummary:
    """Exact rational utilization sums over a validated vCPU set."""
    u1_1 = Fraction(0)
    u2_1 = Fraction(0)
    u2_2 = Fraction(0)
    for spec in specs:
        spec.validate()
        if spec.criticality is LO:
            u1_1 += spec.u_opt
        else:
            u2_1 += spec.u_opt
            u2_2 += spec.u_pes
    return UtilSummary(u1_1, u2_1, u2_2)


def compute_scaling_factor(u: UtilSummary) -> Fraction:
    """Deadline-shrinking factor x = u2_1 / (1 - u1_1).

    Raises InfeasibleError when u1_1 >= 1: the LO-criticality load alone
    fills the core, so no scaling factor exists.
    """
    if u.u1_1 >= 1:
        raise InfeasibleError(
            f"LO-criticality utilization {u.u1_1} saturates the core"
        )
    return u.u2_1 / (1 - u.u1_1)


def admission_test(specs: list[VCpuSpec]) -> AdmissionResult:
    """Schedulability test for one core.

    Accepts iff (a) u1_1 + u2_1 <= 1 (equivalently x <= 1) and
    (b) x * u1_1 + u2_2 <= 1. Rejections name the failed condition and
    carry the computed utilizations.
    """
    u = compute_utilizations(specs)
    if u.u1_1 + u.u2_1 > 1:
        x = None
        if u.u2_1 == 0 or u.u1_1 < 1:
            x = Fraction(0) if u.u2_1 == 0 else compute_scaling_factor(u)
        return AdmissionResult(
            accepted=False,
            utils=u,
            x=x,
            bound=None if x is None else x * u.u1_1 + u.u2_2,
            reason=f"optimistic utilization u1_1 + u2_1 = {u.u1_1 + u.u2_1} > 1",
        )
    # With no HI vCPUs the scaling factor is irrelevant; treat it as 0 so a
    # pure-LO set at exactly u1_1 = 1 is admitted (plain EDF boundary).
    x = Fraction(0) if u.u2_1 == 0 else compute_scaling_factor(u)
    bound = x * u.u1_1 + u.u2_2
    if bound > 1:
        return AdmissionResult(
            accepted=False,
            utils=u,
            x=x,
            bound=bound,
            reason=f"virtual-deadline bound x*u1_1 + u2_2 = {bound} > 1",
        )
    return AdmissionResult(accepted=True, utils=u, x=x, bound=bound)


def virtual_deadline(spec: VCpuSpec, now: int, x: Fraction) -> int:
    """Deadline assigned at a replenishment in LO mode.

    HI vCPUs get their period shrunk by x (floored to the microsecond
    tick); LO vCPUs keep their full period.
    """
    if spec.criticality is HI:
        return now + int(x * spec.period)
    return now + spec.period


def replenish(v: VCpuRuntime, now: int, pcpu: PCpuState) -> None:
    """Start a new period at the vCPU's timer tick.

    Refills the budget (optimistic for LO, pessimistic for HI), assigns
    the deadline for the current core mode, and cools the temperature by
    one degree if the period that just ended made no pessimistic demand.
    """
    spec = v.spec
    if (
        spec.criticality is HI
        and v.temperature > 0
        and not v.demanded_pessimistic_this_period
    ):
        v.temperature -= 1
    v.active = True
    v.executed_in_period = 0
    v.demanded_pessimistic_this_period = False
    v.period_start = now
    if spec.criticality is HI:
        v.budget_remaining = spec.c_pes  # type: ignore[assignment]
        if pcpu.mode is PCpuMode.LO:
            v.deadline = virtual_deadline(spec, now, pcpu.x_factor)
        else:
            v.deadline = now + spec.period
    else:
        v.budget_remaining = spec.c_opt
        v.deadline = now + spec.period
    v.budget_at_replenish = v.budget_remaining


def account(v: VCpuRuntime, ran_for: int) -> None:
    """Charge `ran_for` microseconds of execution to the vCPU.

    The budget floors at zero (work-conserving slack runs over-budget by
    design); the vCPU deactivates the moment its budget is exhausted.
    """
    if ran_for < 0:
        raise SchedulingInvariantError(f"negative execution time {ran_for}")
    v.executed_in_period += ran_for
    if v.budget_remaining > 0:
        v.budget_remaining = max(0, v.budget_remaining - ran_for)
        if v.budget_remaining == 0:
            v.active = False


def check_hi_demand(v: VCpuRuntime) -> bool:
    """True iff a HI vCPU has consumed its optimistic budget and still has
    pending work, i.e. it now requires its pessimistic share.

    On a True result the caller must mark the demand (temperature to the
    configured initial value, demand flag set) and escalate the core.
    """
    if v.spec.criticality is not HI:
        raise SchedulingInvariantError(
            f"check_hi_demand called on LO vCPU {v.spec.id}"
        )
    return v.executed_in_period >= v.spec.c_opt and v.runnable


def mark_pessimistic_demand(v: VCpuRuntime, theta0: int) -> None:
    """Record that the vCPU asked for its pessimistic budget this period."""
    v.demanded_pessimistic_this_period = True
    v.temperature = theta0


def mode_switch_to_hi(pcpu: PCpuState, now: int) -> bool:
    """Escalate the core to HI mode, rebasing HI deadlines to actual ones.

    Effective immediately; idempotent when already in HI mode. Returns
    True iff the mode actually changed.
    """
    if pcpu.mode is PCpuMode.HI:
        return False
    pcpu.mode = PCpuMode.HI
    for v in pcpu.vcpus:
        if v.spec.criticality is HI:
            v.deadline = v.period_start + v.spec.period
    resort(pcpu)
    return True


def maybe_switch_to_lo(pcpu: PCpuState) -> bool:
    """De-escalate to LO mode once every HI vCPU has cooled to zero.

    Evaluated at timer ticks after temperature cooling. Deadlines revert
    to virtual ones lazily, at each vCPU's next replenishment. Returns
    True iff the mode changed.
    """
    if pcpu.mode is not PCpuMode.HI:
        return False
    for v in pcpu.vcpus:
        if v.spec.criticality is HI and v.temperature > 0:
            return False
    pcpu.mode = PCpuMode.LO
    return True


def _order_key(v: VCpuRuntime) -> tuple[int, int, int, int]:
    # Active servers ahead of inactive ones, then EDF; equal deadlines
    # rotate least-recently-run first (fresh peers fall back to id order).
    return (0 if v.active else 1, v.deadline, v.last_descheduled, v.spec.id)


def enqueue(pcpu: PCpuState, v: VCpuRuntime) -> None:
    """Insert into the runqueue preserving its ordering invariant.

    Linear-time insertion; duplicates are a contract violation.
    """
    for queued in pcpu.runqueue:
        if queued is v:
            raise SchedulingInvariantError(
                f"vCPU {v.spec.id} already queued on pCPU {pcpu.id}"
            )
    key = _order_key(v)
    for i, queued in enumerate(pcpu.runqueue):
        if key < _order_key(queued):
            pcpu.runqueue.insert(i, v)
            return
    pcpu.runqueue.append(v)


def dequeue(pcpu: PCpuState, v: VCpuRuntime) -> None:
    pcpu.runqueue.remove(v)


def resort(pcpu: PCpuState) -> None:
    """Re-establish queue order after deadlines changed in place."""
    pcpu.runqueue.sort(key=_order_key)


def next_tick(pcpu: PCpuState, now: int) -> int:
    """Earliest upcoming replenishment among the core's vCPUs."""
    if not pcpu.vcpus:
        return now
    return min(v.period_start + v.spec.period for v in pcpu.vcpus)


def slice_for(v: VCpuRuntime, pcpu: PCpuState, now: int, slack: bool) -> int:
    """Time slice granted to a chosen vCPU.

    Normally the remaining budget, with two refinements: a HI vCPU that
    has not yet consumed its optimistic budget is capped at the optimistic
    remainder so the pessimistic-demand checkpoint lands on an event
    boundary, and slack (out-of-budget or out-of-mode) picks are capped at
    the next timer tick.
    """
    spec = v.spec
    if v.active:
        grant = v.budget_remaining
        if spec.criticality is HI and v.executed_in_period < spec.c_opt:
            grant = min(grant, spec.c_opt - v.executed_in_period)
    else:
        grant = next_tick(pcpu, now) - now
    if slack:
        grant = min(grant, next_tick(pcpu, now) - now)
    return grant


def pick_next(
    pcpu: PCpuState, now: int
) -> Optional[tuple[VCpuRuntime, int, bool]]:
    """Choose the next vCPU to dispatch and its slice.

    In LO mode the eligible set is every runnable active vCPU; in HI mode
    only runnable active HI vCPUs. The earliest deadline wins. When no
    vCPU is eligible the core is work conserving: runnable HI vCPUs first
    in HI mode, then runnable LO vCPUs, actives ahead of exhausted ones,
    with slices stretching only to the next timer tick. Returns None iff
    nothing is runnable; the third element flags a slack pick.
    """
    if pcpu.mode is PCpuMode.LO:
        best_active = None
        best_inactive = None
        for v in pcpu.runqueue:
            if not v.runnable:
                continue
            if v.active:
                best_active = v
                break
            if best_inactive is None:
                best_inactive = v
        if best_active is not None:
            return best_active, slice_for(best_active, pcpu, now, False), False
        if best_inactive is not None:
            return (
                best_inactive,
                slice_for(best_inactive, pcpu, now, True),
                True,
            )
        return None

    # HI mode: runnable HI vCPUs take absolute priority (active first, the
    # queue order provides EDF within each group); LO vCPUs only soak up
    # slack, actives ahead of inactives.
    choices: list[Optional[VCpuRuntime]] = [None, None, None, None]
    for v in pcpu.runqueue:
        if not v.runnable:
            continue
        hi = v.spec.criticality is HI
        rank = (0 if hi else 2) + (0 if v.active else 1)
        if choices[rank] is None:
            choices[rank] = v
            if rank == 0:
                break
    for rank, v in enumerate(choices):
        if v is not None:
            slack = rank != 0
            return v, slice_for(v, pcpu, now, slack), slack
    return None
