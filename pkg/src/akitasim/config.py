"""Scenario file format: TOML with duration suffixes and strict keys.

Top level: `policy`, `horizon`, `seed`, a `[host]` table
(`num_pcpus`, `reserved_pcpus`, `theta0`), and `[[vm]]` blocks carrying
`name`, `criticality`, `c_opt`, `c_pes`, `period`, an optional `count`
for replication, an optional `scalable` marker for sweeps, and a
`workload` table. Durations accept `us`, `ms`, and `s` suffixes; bare
integers are microseconds. Unknown keys are errors, never ignored.
"""

from __future__ import annotations

import sys
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .scenario import POLICIES, Scenario, VmSpec, make_vm
from .workloads import (
    DutyCycleCpu,
    FiniteWork,
    PhasedCpu,
    PoissonRequests,
    WorkloadSpec,
)


class ConfigError(ValueError):
    """Invalid scenario file; message carries the offending key or line."""


_SUFFIXES = (("us", 1), ("ms", 1_000), ("s", 1_000_000))


def parse_duration(value: Any, key: str) -> int:
    """A duration in integer microseconds, from '25ms'/'46us'/'2s' or int."""
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a duration, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        text = value.strip()
        for suffix, mul in _SUFFIXES:
            if text.endswith(suffix):
                digits = text[: -len(suffix)].strip()
                try:
                    return int(digits) * mul
                except ValueError:
                    break
        raise ConfigError(
            f"{key}: malformed duration {value!r} (use e.g. '25ms', '46us', '2s')"
        )
    raise ConfigError(f"{key}: expected a duration, got {value!r}")


def _take(table: dict, key: str, ctx: str, default=None, required=False):
    if key in table:
        return table.pop(key)
    if required:
        raise ConfigError(f"{ctx}: missing required key {key!r}")
    return default


def _reject_unknown(table: dict, ctx: str) -> None:
    if table:
        keys = ", ".join(sorted(table.keys()))
        raise ConfigError(f"{ctx}: unknown keys: {keys}")


def _parse_workload(table: Any, ctx: str) -> WorkloadSpec:
    if not isinstance(table, dict):
        raise ConfigError(f"{ctx}: workload must be a table")
    table = dict(table)
    kind = _take(table, "kind", ctx, required=True)
    if kind == "poisson":
        spec = PoissonRequests(
            connections=int(_take(table, "connections", ctx, required=True)),
            rate_per_connection=float(
                _take(table, "rate_per_connection", ctx, required=True)
            ),
            service_time=parse_duration(
                _take(table, "service_time", ctx, default=46),
                f"{ctx}.service_time",
            ),
            seed=_take(table, "seed", ctx),
        )
    elif kind == "duty_cycle":
        spec = DutyCycleCpu(
            utilization=float(_take(table, "utilization", ctx, required=True)),
            window=parse_duration(
                _take(table, "window", ctx, default=100_000), f"{ctx}.window"
            ),
        )
    elif kind == "finite":
        spec = FiniteWork(
            total_work=parse_duration(
                _take(table, "total_work", ctx, required=True),
                f"{ctx}.total_work",
            )
        )
    elif kind == "phased":
        raw = _take(table, "phases", ctx, required=True)
        if not isinstance(raw, list):
            raise ConfigError(f"{ctx}.phases: expected a list of [start, util]")
        phases = []
        for i, entry in enumerate(raw):
            if not (isinstance(entry, list) and len(entry) == 2):
                raise ConfigError(
                    f"{ctx}.phases[{i}]: expected [start, utilization]"
                )
            phases.append(
                (
                    parse_duration(entry[0], f"{ctx}.phases[{i}].start"),
                    float(entry[1]),
                )
            )
        spec = PhasedCpu(
            phases=tuple(phases),
            window=parse_duration(
                _take(table, "window", ctx, default=10_000), f"{ctx}.window"
            ),
        )
    else:
        raise ConfigError(f"{ctx}.kind: unknown workload kind {kind!r}")
    _reject_unknown(table, ctx)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc
    return spec


def scenario_from_dict(raw: dict, overrides: Optional[dict] = None) -> Scenario:
    data = dict(raw)
    overrides = dict(overrides or {})

    policy = overrides.pop("policy", None) or _take(
        data, "policy", "top level", default="akita"
    )
    seed_override = overrides.pop("seed", None)
    seed = seed_override if seed_override is not None else _take(
        data, "seed", "top level", default=0
    )
    horizon = parse_duration(
        _take(data, "horizon", "top level", required=True), "horizon"
    )

    host = _take(data, "host", "top level", default={})
    if not isinstance(host, dict):
        raise ConfigError("host: expected a table")
    host = dict(host)
    num_pcpus = int(_take(host, "num_pcpus", "host", default=1))
    reserved = int(_take(host, "reserved_pcpus", "host", default=0))
    theta0_override = overrides.pop("theta0", None)
    theta0 = (
        theta0_override
        if theta0_override is not None
        else int(_take(host, "theta0", "host", default=2))
    )
    _reject_unknown(host, "host")

    vm_blocks = _take(data, "vm", "top level", default=[])
    _reject_unknown(data, "top level")
    if not isinstance(vm_blocks, list):
        raise ConfigError("vm: expected an array of tables")

    vm_count_override = overrides.pop("vm_count", None)
    rate_override = overrides.pop("rate", None)
    if overrides:
        raise ConfigError(f"unknown overrides: {sorted(overrides)}")

    scalable_blocks = sum(
        1 for blk in vm_blocks if isinstance(blk, dict) and blk.get("scalable")
    )
    if vm_count_override is not None and scalable_blocks != 1:
        raise ConfigError(
            "vm_count sweep requires exactly one VM block marked scalable = true"
        )

    vms: list[tuple[VmSpec, WorkloadSpec]] = []
    vm_id = 0
    for i, blk in enumerate(vm_blocks):
        ctx = f"vm[{i}]"
        if not isinstance(blk, dict):
            raise ConfigError(f"{ctx}: expected a table")
        blk = dict(blk)
        name = _take(blk, "name", ctx, required=True)
        criticality = _take(blk, "criticality", ctx, required=True)
        if str(criticality).strip().upper() not in ("HI", "LO", "HIGH", "LOW"):
            raise ConfigError(f"{ctx}.criticality: expected HI or LO")
        c_opt = parse_duration(
            _take(blk, "c_opt", ctx, required=True), f"{ctx}.c_opt"
        )
        c_pes_raw = _take(blk, "c_pes", ctx)
        c_pes = (
            parse_duration(c_pes_raw, f"{ctx}.c_pes")
            if c_pes_raw is not None
            else None
        )
        period = parse_duration(
            _take(blk, "period", ctx, required=True), f"{ctx}.period"
        )
        vcpus = int(_take(blk, "vcpus", ctx, default=1))
        count = int(_take(blk, "count", ctx, default=1))
        scalable = bool(_take(blk, "scalable", ctx, default=False))
        if scalable and vm_count_override is not None:
            count = int(vm_count_override)
        workload = _parse_workload(
            _take(blk, "workload", ctx, required=True), f"{ctx}.workload"
        )
        if rate_override is not None and isinstance(workload, PoissonRequests):
            workload = PoissonRequests(
                connections=workload.connections,
                rate_per_connection=float(rate_override),
                service_time=workload.service_time,
                seed=workload.seed,
            )
        _reject_unknown(blk, ctx)
        if count < 1:
            raise ConfigError(f"{ctx}.count: must be >= 1")
        for k in range(count):
            vm_name = name if count == 1 else f"{name}{k + 1}"
            vms.append(
                (
                    make_vm(
                        vm_id,
                        vm_name,
                        criticality,
                        c_opt,
                        period,
                        c_pes,
                        vcpus,
                    ),
                    workload,
                )
            )
            vm_id += 1

    scenario = Scenario(
        vms=vms,
        num_pcpus=num_pcpus,
        policy=str(policy),
        horizon=horizon,
        seed=int(seed),
        theta0=theta0,
        reserved_pcpus=reserved,
    )
    try:
        scenario.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return scenario


def load_scenario(path: str, overrides: Optional[dict] = None) -> Scenario:
    """Parse a scenario file; parse errors carry line numbers, semantic
    errors the offending key path."""
    try:
        with open(path, "rb") as fp:
            raw = tomllib.load(fp)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return scenario_from_dict(raw, overrides)


def _fmt_duration(us: int) -> str:
    if us % 1_000_000 == 0:
        return f'"{us // 1_000_000}s"'
    if us % 1_000 == 0:
        return f'"{us // 1_000}ms"'
    return f'"{us}us"'


def scenario_to_toml(scenario: Scenario) -> str:
    """Serialize a scenario back to its file form (round-trip stable)."""
    lines = [
        f'policy = "{scenario.policy}"',
        f"horizon = {_fmt_duration(scenario.horizon)}",
        f"seed = {scenario.seed}",
        "",
        "[host]",
        f"num_pcpus = {scenario.num_pcpus}",
        f"reserved_pcpus = {scenario.reserved_pcpus}",
        f"theta0 = {scenario.theta0}",
    ]
    for vm, workload in scenario.vms:
        lines += [
            "",
            "[[vm]]",
            f'name = "{vm.name}"',
            f'criticality = "{vm.criticality.value}"',
            f"c_opt = {_fmt_duration(vm.c_opt)}",
        ]
        if vm.c_pes is not None:
            lines.append(f"c_pes = {_fmt_duration(vm.c_pes)}")
        lines.append(f"period = {_fmt_duration(vm.period)}")
        if vm.vcpus != 1:
            lines.append(f"vcpus = {vm.vcpus}")
        lines.append("[vm.workload]")
        if isinstance(workload, PoissonRequests):
            lines.append('kind = "poisson"')
            lines.append(f"connections = {workload.connections}")
            lines.append(f"rate_per_connection = {workload.rate_per_connection}")
            lines.append(f"service_time = {_fmt_duration(workload.service_time)}")
            if workload.seed is not None:
                lines.append(f"seed = {workload.seed}")
        elif isinstance(workload, DutyCycleCpu):
            lines.append('kind = "duty_cycle"')
            lines.append(f"utilization = {workload.utilization}")
            lines.append(f"window = {_fmt_duration(workload.window)}")
        elif isinstance(workload, FiniteWork):
            lines.append('kind = "finite"')
            lines.append(f"total_work = {_fmt_duration(workload.total_work)}")
        elif isinstance(workload, PhasedCpu):
            lines.append('kind = "phased"')
            phases = ", ".join(
                f"[{_fmt_duration(start)}, {util}]"
                for start, util in workload.phases
            )
            lines.append(f"phases = [{phases}]")
            lines.append(f"window = {_fmt_duration(workload.window)}")
    return "\n".join(lines) + "\n"
