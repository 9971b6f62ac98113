"""Declarative experiment description: VMs, workloads, host, policy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .mcs import HI, LO, CriticalityLevel, VCpuSpec
from .workloads import WorkloadSpec

POLICIES = ("akita", "edf", "credit")


@dataclass(frozen=True)
class VmSpec:
    """Static VM contract; vCPUs inherit the budgets and criticality."""

    vm_id: int
    name: str
    criticality: CriticalityLevel
    c_opt: int
    period: int
    c_pes: Optional[int] = None
    vcpus: int = 1


@dataclass
class Scenario:
    vms: list[tuple[VmSpec, WorkloadSpec]]
    num_pcpus: int
    policy: str = "akita"
    horizon: int = 1_000_000
    seed: int = 0
    theta0: int = 2
    reserved_pcpus: int = 0

    def validate(self) -> "Scenario":
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.num_pcpus < 1:
            raise ValueError("num_pcpus must be >= 1")
        if not (0 <= self.reserved_pcpus < self.num_pcpus):
            raise ValueError("reserved_pcpus must leave at least one usable pCPU")
        if self.theta0 < 1:
            raise ValueError("theta0 must be >= 1")
        names = set()
        ids = set()
        for vm, workload in self.vms:
            if vm.name in names:
                raise ValueError(f"duplicate VM name {vm.name!r}")
            if vm.vm_id in ids:
                raise ValueError(f"duplicate VM id {vm.vm_id}")
            names.add(vm.name)
            ids.add(vm.vm_id)
            if vm.vcpus < 1:
                raise ValueError(f"VM {vm.name!r} must have at least one vCPU")
            workload.validate()
        for spec in self.vcpu_specs():
            spec.validate()
        return self

    def vcpu_specs(self) -> list[VCpuSpec]:
        """vCPU specs in VM declaration order; ids are assigned densely."""
        specs = []
        next_id = 0
        for vm, _ in self.vms:
            for _ in range(vm.vcpus):
                specs.append(
                    VCpuSpec(
                        id=next_id,
                        vm_id=vm.vm_id,
                        c_opt=vm.c_opt,
                        c_pes=vm.c_pes,
                        period=vm.period,
                        criticality=vm.criticality,
                    )
                )
                next_id += 1
        return specs

    def vm_by_id(self, vm_id: int) -> VmSpec:
        for vm, _ in self.vms:
            if vm.vm_id == vm_id:
                return vm
        raise KeyError(vm_id)


def make_vm(
    vm_id: int,
    name: str,
    criticality,
    c_opt: int,
    period: int,
    c_pes: Optional[int] = None,
    vcpus: int = 1,
) -> VmSpec:
    """Convenience constructor accepting criticality as enum or string."""
    if isinstance(criticality, str):
        criticality = (
            HI if criticality.strip().upper() in ("HI", "HIGH") else LO
        )
    return VmSpec(
        vm_id=vm_id,
        name=name,
        criticality=criticality,
        c_opt=c_opt,
        period=period,
        c_pes=c_pes,
        vcpus=vcpus,
    )
