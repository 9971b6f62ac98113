"""Deterministic discrete-event simulation of a multi-core virtualized host.

One run is strictly single-threaded: events are processed in total
(time, kind-priority, sequence) order, with replenishment ticks ahead of
slice expiries ahead of request arrivals and work-phase changes at equal
timestamps. Identical (scenario, seed) pairs produce identical traces.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import mcs
from .mcs import HI, PCpuMode, SchedulingInvariantError
from .placement import PlacementPlan, first_fit_assign
from .policies import CreditPolicy, make_policy
from .scenario import Scenario, VmSpec
from .trace import PcpuStats, Trace, VmStats
from .workloads import RequestStream, build_model

EV_TICK = 0
EV_EXPIRY = 1
EV_ARRIVAL = 2
EV_PHASE = 3
EV_END = 4

WINDOW_US = 1_000_000


class PlacementRejected(RuntimeError):
    """The scenario's vCPU set does not fit on the configured host."""

    def __init__(self, plan: PlacementPlan):
        reasons = "; ".join(f"vCPU {vid}: {why}" for vid, why in plan.rejected)
        super().__init__(f"placement rejected: {reasons}")
        self.plan = plan


@dataclass(kw_only=True)
class SimVcpu(mcs.VCpuRuntime):
    vm: VmSpec = None
    vm_stats: VmStats = None
    model: object = None
    pcpu: "SimPcpu" = None
    # Wait accounting feeds the deadline-miss rule: time spent runnable
    # but not running within the current period.
    wait_start: int = -1
    waited_in_period: int = 0
    miss_count: int = 0
    executed_total: int = 0


@dataclass(kw_only=True)
class SimPcpu(mcs.PCpuState):
    stats: PcpuStats = None
    dispatched_at: int = 0
    dispatch_gen: int = 0
    idle_since: int = 0
    hi_since: int = -1
    pending_desched: Optional[tuple] = None

    def __lt__(self, other):
        return self.id < other.id


class Simulation:
    """Single-use simulation of one scenario."""

    def __init__(self, scenario: Scenario, collect_records: bool = True):
        scenario.validate()
        self.scenario = scenario
        self.horizon = scenario.horizon
        self.policy = make_policy(scenario.policy, scenario.theta0)
        specs = scenario.vcpu_specs()
        self.plan = first_fit_assign(
            specs,
            scenario.num_pcpus,
            scenario.reserved_pcpus,
            test=self.policy.placement_test,
        )
        if self.plan.rejected:
            raise PlacementRejected(self.plan)

        self.records: Optional[list] = [] if collect_records else None
        self.now = 0
        self.heap: list = []
        self.seq = 0
        self.dirty: set[SimPcpu] = set()

        self.vm_stats: dict[int, VmStats] = {}
        for vm, _ in scenario.vms:
            self.vm_stats[vm.vm_id] = VmStats(vm_id=vm.vm_id, name=vm.name)

        seed_seq = np.random.SeedSequence(scenario.seed)
        children = seed_seq.spawn(len(specs))

        self.pcpus: dict[int, SimPcpu] = {}
        self.vcpus: list[SimVcpu] = []
        x_by_pcpu = self.plan.per_pcpu_x
        spec_by_id = {s.id: s for s in specs}
        vm_of_vcpu: dict[int, VmSpec] = {}
        workload_of_vm = {vm.vm_id: wl for vm, wl in scenario.vms}
        for s in specs:
            vm_of_vcpu[s.id] = scenario.vm_by_id(s.vm_id)

        for vcpu_id, pcpu_id in self.plan.assignments.items():
            pcpu = self.pcpus.get(pcpu_id)
            if pcpu is None:
                pcpu = SimPcpu(
                    id=pcpu_id,
                    stats=PcpuStats(pcpu_id=pcpu_id),
                    x_factor=x_by_pcpu.get(pcpu_id) or mcs.Fraction(0),
                )
                self.pcpus[pcpu_id] = pcpu
            spec = spec_by_id[vcpu_id]
            vm = vm_of_vcpu[vcpu_id]
            model = build_model(
                workload_of_vm[vm.vm_id], children[vcpu_id], self.horizon
            )
            v = SimVcpu(
                spec=spec,
                vm=vm,
                vm_stats=self.vm_stats[vm.vm_id],
                model=model,
                pcpu=pcpu,
            )
            pcpu.vcpus.append(v)
            self.vcpus.append(v)

        self._finished = False

    # -- bookkeeping helpers -------------------------------------------

    def push(self, time: int, kind: int, a=None, b=None) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (time, kind, self.seq, a, b))

    def record(
        self,
        time: int,
        pcpu,
        kind: str,
        vcpu=None,
        deadline="",
        budget="",
        detail="",
    ) -> None:
        if self.records is None:
            return
        if vcpu is not None:
            vid = vcpu.spec.id
            vm = vcpu.vm.name
        else:
            vid = ""
            vm = ""
        mode = pcpu.mode.value if pcpu is not None else ""
        pid = pcpu.id if pcpu is not None else ""
        self.records.append(
            (time, pid, kind, vid, vm, mode, deadline, budget, detail)
        )

    def _add_window_exec(self, stats: VmStats, t0: int, t1: int) -> None:
        buckets = stats.window_exec_us
        while t0 < t1:
            w = t0 // WINDOW_US
            while len(buckets) <= w:
                buckets.append(0)
            end = min(t1, (w + 1) * WINDOW_US)
            buckets[w] += end - t0
            t0 = end

    def _close_wait(self, v: SimVcpu) -> None:
        if v.wait_start >= 0:
            v.waited_in_period += self.now - v.wait_start
            v.wait_start = -1

    # -- core state transitions ----------------------------------------

    def sync(self, pcpu: SimPcpu) -> None:
        """Bring the running vCPU's accounting up to `now` and deschedule
        it back into the runqueue."""
        v = pcpu.current
        if v is None:
            return
        now = self.now
        if pcpu.slice_end is not None and now > pcpu.slice_end:
            raise SchedulingInvariantError(
                f"vCPU {v.spec.id} ran past its granted slice"
            )
        t0 = pcpu.dispatched_at
        ran = now - t0
        if ran > 0:
            self.policy.charge(v, ran)
            before = None
            model = v.model
            if isinstance(model, RequestStream):
                before = model.served_idx
            model.consume(t0, now)
            if before is not None and self.records is not None:
                comp = model.completion
                arr = model.arrivals
                for i in range(before, model.served_idx):
                    t_done = int(comp[i])
                    self.records.append(
                        (
                            t_done,
                            pcpu.id,
                            "completion",
                            v.spec.id,
                            v.vm.name,
                            pcpu.mode.value,
                            "",
                            "",
                            f"req={i};rtt={t_done - int(arr[i])}",
                        )
                    )
            v.executed_total += ran
            pcpu.stats.exec_us += ran
            self._add_window_exec(v.vm_stats, t0, now)
        v.runnable = v.model.runnable(now)
        v.last_descheduled = now
        pcpu.dispatch_gen += 1
        pcpu.current = None
        pcpu.slice_end = None
        self.policy.enqueue(pcpu, v)
        v.wait_start = now if v.runnable else -1
        if not v.runnable:
            reason = "yield"
        elif isinstance(self.policy, CreditPolicy):
            reason = "slice"
        elif v.budget_remaining == 0:
            reason = "budget"
        else:
            reason = "preempt"
        pcpu.pending_desched = (v, reason)

    def wake(self, v: SimVcpu) -> None:
        """An idle vCPU became runnable."""
        now = self.now
        v.runnable = True
        v.wait_start = now
        pcpu = v.pcpu
        if isinstance(self.policy, CreditPolicy):
            self.policy.boost(pcpu, v)
        if self.policy.wake_preempts(pcpu, v, now):
            self.dirty.add(pcpu)

    def sleep(self, v: SimVcpu) -> None:
        """A waiting vCPU lost its pending work (phase boundary)."""
        v.runnable = False
        self._close_wait(v)
        if isinstance(self.policy, CreditPolicy):
            self.policy.dequeue(v.pcpu, v)

    def eval_period(self, v: SimVcpu) -> None:
        """Deadline-miss rule, applied at the vCPU's timer tick.

        A period is missed when budget was left unused, work was still
        pending at the period end, and the vCPU spent at least the unused
        budget's worth of time runnable but denied the core.
        """
        now = self.now
        if v.wait_start >= 0:
            v.waited_in_period += now - v.wait_start
            v.wait_start = now
        unused = v.budget_at_replenish - v.executed_in_period
        if unused > 0 and v.model.runnable(now) and v.waited_in_period >= unused:
            v.miss_count += 1
            v.vm_stats.deadline_misses += 1
            self.record(now, v.pcpu, "deadline_miss", v, detail=f"unused={unused}")
        v.waited_in_period = 0

    # -- event handlers --------------------------------------------------

    def handle_tick(self, v: SimVcpu) -> None:
        now = self.now
        pcpu = v.pcpu
        self.sync(pcpu)
        self.eval_period(v)
        self.policy.replenish(v, now, pcpu)
        self.policy.requeue_repositioned(pcpu, v)
        self.record(
            now,
            pcpu,
            "replenish",
            v,
            deadline=v.deadline,
            budget=v.budget_remaining,
        )
        if self.policy.after_tick(pcpu, now):
            pcpu.stats.mode_switches += 1
            if pcpu.hi_since >= 0:
                pcpu.stats.hi_mode_us += now - pcpu.hi_since
                pcpu.hi_since = -1
            self.record(now, pcpu, "mode_switch", detail="HI->LO")
        self.push(now + v.spec.period, EV_TICK, v)
        self.dirty.add(pcpu)

    def handle_arrival(self, v: SimVcpu, idx: int) -> None:
        now = self.now
        stream: RequestStream = v.model
        if self.records is not None:
            self.record(now, v.pcpu, "arrival", v, detail=f"req={idx}")
        nxt = stream.next_arrival(idx + 1)
        if nxt is not None:
            self.push(nxt, EV_ARRIVAL, v, idx + 1)
        if v is not v.pcpu.current and not v.runnable:
            self.wake(v)

    def handle_phase(self, v: SimVcpu) -> None:
        now = self.now
        pcpu = v.pcpu
        model = v.model
        if v is pcpu.current:
            self.sync(pcpu)
            self.dirty.add(pcpu)
        was = v.runnable
        model.on_boundary(now)
        runnable = model.runnable(now)
        if runnable and not was:
            self.wake(v)
        elif was and not runnable and v is not pcpu.current:
            self.sleep(v)
        nxt = model.next_boundary(now)
        if nxt is not None:
            self.push(nxt, EV_PHASE, v)

    def handle_expiry(self, pcpu: SimPcpu, gen: int) -> None:
        if gen != pcpu.dispatch_gen or pcpu.current is None:
            return
        self.sync(pcpu)
        self.dirty.add(pcpu)

    # -- dispatch ---------------------------------------------------------

    def dispatch(self, pcpu: SimPcpu) -> None:
        now = self.now
        if pcpu.current is not None:
            self.sync(pcpu)
        for v, switched in self.policy.escalations(pcpu, now):
            self.record(
                now,
                pcpu,
                "pessimistic_demand",
                v,
                budget=v.budget_remaining,
                detail=f"temperature={v.temperature}",
            )
            if switched:
                pcpu.stats.mode_switches += 1
                pcpu.hi_since = now
                self.record(now, pcpu, "mode_switch", detail="LO->HI")
        pick = self.policy.pick(pcpu, now)
        prev = pcpu.pending_desched
        pcpu.pending_desched = None
        if pick is None:
            for v in pcpu.vcpus:
                if v.runnable:
                    raise SchedulingInvariantError(
                        f"pCPU {pcpu.id} idles while vCPU {v.spec.id} is runnable"
                    )
            if prev is not None:
                self.record(now, pcpu, "deschedule", prev[0], detail=prev[1])
            if pcpu.idle_since < 0:
                pcpu.idle_since = now
            return
        v, slice_us, slack = pick
        if pcpu.idle_since >= 0:
            dur = now - pcpu.idle_since
            if dur > 0:
                pcpu.stats.idle_us += dur
                self.record(
                    pcpu.idle_since, pcpu, "idle", detail=f"duration={dur}"
                )
            pcpu.idle_since = -1
        self.policy.dequeue(pcpu, v)
        self._close_wait(v)
        pcpu.current = v
        pcpu.dispatched_at = now
        pcpu.dispatch_gen += 1
        busy = v.model.busy_until(now, now + slice_us)
        if busy <= now:
            raise SchedulingInvariantError(
                f"vCPU {v.spec.id} dispatched with no work"
            )
        pcpu.slice_end = busy
        self.push(busy, EV_EXPIRY, pcpu, pcpu.dispatch_gen)
        if prev is not None and prev[0] is v:
            return  # continuation: same vCPU, no records
        if self.records is not None:
            if prev is not None:
                self.record(now, pcpu, "deschedule", prev[0], detail=prev[1])
            self.record(
                now,
                pcpu,
                "dispatch",
                v,
                deadline=v.deadline,
                budget=v.budget_remaining,
                detail=f"slice={busy - now}" + (";slack" if slack else ""),
            )

    # -- run loop ---------------------------------------------------------

    def run(self) -> Trace:
        if self._finished:
            raise RuntimeError("simulation already ran")
        self._finished = True
        heap = self.heap
        pcpus = sorted(self.pcpus.values(), key=lambda p: p.id)

        for pcpu in pcpus:
            for v in sorted(pcpu.vcpus, key=lambda v: v.spec.id):
                v.runnable = v.model.runnable(0)
                if v.runnable:
                    v.wait_start = 0
                self.policy.enqueue(pcpu, v)
                if self.policy.uses_ticks:
                    self.push(0, EV_TICK, v)
                model = v.model
                if isinstance(model, RequestStream):
                    first = model.next_arrival(0)
                    if first is not None:
                        self.push(first, EV_ARRIVAL, v, 0)
                else:
                    boundary = model.next_boundary(0)
                    if boundary is not None:
                        self.push(boundary, EV_PHASE, v)
        self.push(self.horizon, EV_END)

        dirty = self.dirty
        dirty.update(pcpus)
        if heap[0][0] > 0:
            for pcpu in sorted(dirty):
                self.dispatch(pcpu)
            dirty.clear()

        running = True
        while running:
            t, kind, _, a, b = heapq.heappop(heap)
            if t < self.now:
                raise SchedulingInvariantError("event queue out of order")
            self.now = t
            while True:
                if kind == EV_END:
                    running = False
                    break
                if kind == EV_TICK:
                    self.handle_tick(a)
                elif kind == EV_EXPIRY:
                    self.handle_expiry(a, b)
                elif kind == EV_ARRIVAL:
                    self.handle_arrival(a, b)
                else:
                    self.handle_phase(a)
                if heap and heap[0][0] == t:
                    _, kind, _, a, b = heapq.heappop(heap)
                    continue
                break
            if not running:
                break
            if dirty:
                for pcpu in sorted(dirty):
                    self.dispatch(pcpu)
                dirty.clear()

        return self._finalize()

    def _finalize(self) -> Trace:
        self.now = self.horizon
        for pcpu in sorted(self.pcpus.values(), key=lambda p: p.id):
            self.sync(pcpu)
            if pcpu.pending_desched is not None:
                v, reason = pcpu.pending_desched
                self.record(self.horizon, pcpu, "deschedule", v, detail=reason)
                pcpu.pending_desched = None
            if pcpu.idle_since >= 0:
                dur = self.horizon - pcpu.idle_since
                if dur > 0:
                    pcpu.stats.idle_us += dur
                    self.record(
                        pcpu.idle_since, pcpu, "idle", detail=f"duration={dur}"
                    )
                pcpu.idle_since = -1
            if pcpu.hi_since >= 0:
                pcpu.stats.hi_mode_us += self.horizon - pcpu.hi_since
                pcpu.hi_since = -1

        for v in self.vcpus:
            stats = v.vm_stats
            stats.executed_us += v.executed_total
            model = v.model
            if isinstance(model, RequestStream):
                stats.arrived += model.arrived_count()
                stats.completed += model.completed_count()
                stats.rtt_us = np.concatenate([stats.rtt_us, model.rtt_samples()])
                stats.cal_us = np.concatenate([stats.cal_us, model.cal_samples()])
            elif getattr(model, "completed_at", None) is not None:
                done = model.completed_at
                if (
                    stats.execution_time_us is None
                    or done > stats.execution_time_us
                ):
                    stats.execution_time_us = done

        pcpu_stats = []
        for pid in self.plan.usable_pcpus:
            pcpu = self.pcpus.get(pid)
            if pcpu is not None:
                pcpu_stats.append(pcpu.stats)
            else:
                pcpu_stats.append(
                    PcpuStats(pcpu_id=pid, idle_us=self.horizon)
                )

        records = self.records
        if records is not None:
            records.sort(key=lambda r: r[0])

        return Trace(
            policy=self.scenario.policy,
            seed=self.scenario.seed,
            horizon_us=self.horizon,
            theta0=self.scenario.theta0,
            num_pcpus=self.scenario.num_pcpus,
            records=records,
            vms=[self.vm_stats[vm.vm_id] for vm, _ in self.scenario.vms],
            pcpus=pcpu_stats,
            assignments=dict(self.plan.assignments),
            used_cores=self.plan.used_cores,
            placement_idle_cores=self.plan.idle_cores,
        )


def run(scenario: Scenario, collect_records: bool = True) -> Trace:
    """Simulate a scenario to completion and return its trace."""
    return Simulation(scenario, collect_records=collect_records).run()
