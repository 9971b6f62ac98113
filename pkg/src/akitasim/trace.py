"""Trace records and per-run result containers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

TRACE_HEADER = (
    "time_us",
    "pcpu",
    "event_kind",
    "vcpu_id",
    "vm",
    "mode",
    "deadline_us",
    "budget_remaining_us",
    "detail",
)

# A record is (time_us, pcpu, kind, vcpu_id, vm, mode, deadline, budget,
# detail) with "" for fields that do not apply.
Record = tuple


@dataclass
class VmStats:
    """Per-VM results accumulated during a run."""

    vm_id: int
    name: str
    arrived: int = 0
    completed: int = 0
    executed_us: int = 0
    deadline_misses: int = 0
    execution_time_us: Optional[int] = None
    rtt_us: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    cal_us: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    # Executed microseconds per fixed 1 s window, indexed by window number.
    window_exec_us: list[int] = field(default_factory=list)


@dataclass
class PcpuStats:
    pcpu_id: int
    exec_us: int = 0
    idle_us: int = 0
    mode_switches: int = 0
    hi_mode_us: int = 0


@dataclass
class Trace:
    """Everything a finished run exposes to metrics and serialization.

    `records` is None when per-event record collection was disabled (large
    runs); the aggregate statistics are always present.
    """

    policy: str
    seed: int
    horizon_us: int
    theta0: int
    num_pcpus: int
    records: Optional[list[Record]]
    vms: list[VmStats]
    pcpus: list[PcpuStats]
    assignments: dict[int, int]
    used_cores: int
    placement_idle_cores: int
    window_us: int = 1_000_000

    def vm(self, name: str) -> VmStats:
        for v in self.vms:
            if v.name == name:
                return v
        raise KeyError(name)

    def write_csv(self, fp: IO[str]) -> None:
        if self.records is None:
            raise ValueError("run was executed without record collection")
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for rec in self.records:
            writer.writerow(rec)
