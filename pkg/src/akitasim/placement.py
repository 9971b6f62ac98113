"""Admission control and first-fit assignment of vCPUs to physical cores."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .mcs import AdmissionResult, UtilSummary, VCpuSpec, admission_test


@dataclass
class PlacementPlan:
    """Result of assigning vCPUs to cores.

    Every vCPU id appears exactly once, either in `assignments` or in
    `rejected`; each core's assigned set passes the admission test.
    """

    num_pcpus: int
    reserved_pcpus: int = 0
    assignments: dict[int, int] = field(default_factory=dict)
    rejected: list[tuple[int, str]] = field(default_factory=list)
    pcpu_specs: dict[int, list[VCpuSpec]] = field(default_factory=dict)

    @property
    def usable_pcpus(self) -> list[int]:
        return list(range(self.reserved_pcpus, self.num_pcpus))

    @property
    def per_pcpu_util(self) -> dict[int, UtilSummary]:
        return {
            p: admission_test(specs).utils for p, specs in self.pcpu_specs.items()
        }

    @property
    def per_pcpu_x(self) -> dict[int, Fraction]:
        out = {}
        for p, specs in self.pcpu_specs.items():
            result = admission_test(specs)
            out[p] = result.x if result.x is not None else Fraction(0)
        return out

    @property
    def used_cores(self) -> int:
        return sum(1 for specs in self.pcpu_specs.values() if specs)

    @property
    def idle_cores(self) -> int:
        return len(self.usable_pcpus) - self.used_cores

    def admission_for(self, pcpu: int) -> AdmissionResult:
        return admission_test(self.pcpu_specs.get(pcpu, []))

    def all_placed(self) -> bool:
        return not self.rejected


def _capacity_test(specs: list[VCpuSpec]) -> AdmissionResult:
    return admission_test(specs)


def _try_place(
    plan: PlacementPlan, spec: VCpuSpec, test=_capacity_test
) -> Optional[str]:
    """Place one vCPU on the lowest-index admissible core; return the last
    rejection reason when no core fits."""
    spec.validate()
    reason = "no usable pCPUs"
    for p in plan.usable_pcpus:
        existing = plan.pcpu_specs.setdefault(p, [])
        result = test(existing + [spec])
        if result.accepted:
            existing.append(spec)
            plan.assignments[spec.id] = p
            return None
        reason = result.reason or "rejected"
    return reason


def first_fit_assign(
    specs: list[VCpuSpec],
    num_pcpus: int,
    reserved_pcpus: int = 0,
    test=_capacity_test,
) -> PlacementPlan:
    """Assign each vCPU, in arrival order, to the first core whose existing
    set plus the new vCPU passes the admission test.

    vCPUs that fit nowhere land in `rejected` with the failing condition;
    rejection is a result, not an error. Deterministic for a given order.
    `test` defaults to the EDF-VD admission test; baseline policies may
    substitute a plain utilization test.
    """
    if num_pcpus < 1:
        raise ValueError(f"num_pcpus must be >= 1, got {num_pcpus}")
    plan = PlacementPlan(num_pcpus=num_pcpus, reserved_pcpus=reserved_pcpus)
    for p in plan.usable_pcpus:
        plan.pcpu_specs[p] = []
    for spec in specs:
        reason = _try_place(plan, spec, test)
        if reason is not None:
            plan.rejected.append((spec.id, reason))
    return plan


def admit_vm(
    plan: PlacementPlan, vm: list[VCpuSpec], test=_capacity_test
) -> tuple[Optional[PlacementPlan], Optional[str]]:
    """Place all vCPUs of one VM first-fit, atomically.

    Returns (updated plan, None) on success or (None, reason) when any
    vCPU fails to fit, leaving the original plan untouched.
    """
    trial = PlacementPlan(
        num_pcpus=plan.num_pcpus,
        reserved_pcpus=plan.reserved_pcpus,
        assignments=dict(plan.assignments),
        rejected=list(plan.rejected),
        pcpu_specs={p: list(s) for p, s in plan.pcpu_specs.items()},
    )
    for spec in vm:
        reason = _try_place(trial, spec, test)
        if reason is not None:
            return None, f"vCPU {spec.id}: {reason}"
    return trial, None
