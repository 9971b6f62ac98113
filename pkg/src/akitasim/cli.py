"""Command-line interface: run scenarios, test admission, sweep parameters."""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from .config import ConfigError, load_scenario
from .engine import PlacementRejected, Simulation
from .metrics import TAIL_POINTS, frac6, percentile, summarize
from .placement import first_fit_assign
from .trace import Trace

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_REJECTED = 2

CDF_GRID = [Fraction(k, 100) for k in range(1, 100)] + [Fraction(999, 1000)]


def _write_outputs(trace: Trace, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize(trace)

    with open(out_dir / "summary.json", "w") as fp:
        json.dump(summary, fp, indent=2)
        fp.write("\n")

    if trace.records is not None:
        with open(out_dir / "trace.csv", "w") as fp:
            trace.write_csv(fp)

    with open(out_dir / "rtt_cdf.csv", "w") as fp:
        fp.write("vm,p,rtt_us\n")
        for vm in trace.vms:
            if len(vm.rtt_us) == 0:
                continue
            for p in CDF_GRID:
                fp.write(f"{vm.name},{frac6(p)},{percentile(vm.rtt_us, p)}\n")

    with open(out_dir / "tail_table.csv", "w") as fp:
        fp.write("vm,mean_us,p50_us,p95_us,p99_us,p999_us,max_us\n")
        for vm in trace.vms:
            rtt = summary["vms"][vm.name]["rtt"]
            if rtt is None:
                continue
            cells = [str(rtt[f"{name}_us"]) for name, _ in TAIL_POINTS]
            fp.write(
                f"{vm.name},{rtt['mean_us']},{','.join(cells)},{rtt['max_us']}\n"
            )

    with open(out_dir / "shares.csv", "w") as fp:
        fp.write("vm,window_start_us,share\n")
        for vm in trace.vms:
            series = summary["vms"][vm.name]["cpu_share"]["series"]
            for w, share in enumerate(series):
                fp.write(f"{vm.name},{w * trace.window_us},{share}\n")

    with open(out_dir / "idle.csv", "w") as fp:
        fp.write(
            "pcpu,idle_fraction,exec_us,idle_us,mode_switches,hi_mode_fraction\n"
        )
        for pid, entry in summary["pcpus"].items():
            fp.write(
                f"{pid},{entry['idle_fraction']},{entry['exec_us']},"
                f"{entry['idle_us']},{entry['mode_switches']},"
                f"{entry['hi_mode_fraction']}\n"
            )
    return summary


def _print_summary(summary: dict, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(summary, indent=2))
        return
    if fmt == "csv":
        print("vm,mean_us,p50_us,p95_us,p99_us,p999_us,max_us")
        for name, entry in summary["vms"].items():
            rtt = entry["rtt"]
            if rtt is None:
                continue
            print(
                f"{name},{rtt['mean_us']},{rtt['p50_us']},{rtt['p95_us']},"
                f"{rtt['p99_us']},{rtt['p999_us']},{rtt['max_us']}"
            )
        return
    print(
        f"policy={summary['policy']} seed={summary['seed']} "
        f"horizon={summary['horizon_us']}us "
        f"used_cores={summary['used_cores']} "
        f"idle_cores={summary['placement_idle_cores']}"
    )
    print(
        f"{'vm':<12}{'arrived':>10}{'done':>10}{'p99_us':>10}"
        f"{'p999_us':>10}{'misses':>8}{'share':>9}"
    )
    for name, entry in summary["vms"].items():
        rtt = entry["rtt"]
        series = entry["cpu_share"]["series"]
        mean_share = (
            sum(float(s) for s in series) / len(series) if series else 0.0
        )
        print(
            f"{name:<12}"
            f"{entry['requests']['arrived']:>10}"
            f"{entry['requests']['completed']:>10}"
            f"{rtt['p99_us'] if rtt else '-':>10}"
            f"{rtt['p999_us'] if rtt else '-':>10}"
            f"{entry['deadline_misses']:>8}"
            f"{mean_share:>9.4f}"
        )
    for pid, entry in summary["pcpus"].items():
        print(
            f"pcpu {pid}: idle={entry['idle_fraction']} "
            f"mode_switches={entry['mode_switches']} "
            f"hi_mode={entry['hi_mode_fraction']}"
        )


def cmd_run(args) -> int:
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.policy is not None:
            overrides["policy"] = args.policy
        scenario = load_scenario(args.scenario, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        sim = Simulation(scenario, collect_records=not args.no_trace)
    except PlacementRejected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    trace = sim.run()
    summary = _write_outputs(trace, Path(args.out))
    if not args.quiet:
        _print_summary(summary, args.format)
    return EXIT_OK


def _plan_json(scenario) -> tuple[dict, bool]:
    specs = scenario.vcpu_specs()
    plan = first_fit_assign(
        specs, scenario.num_pcpus, scenario.reserved_pcpus
    )
    vm_names = {vm.vm_id: vm.name for vm, _ in scenario.vms}
    per_pcpu = {}
    for pid in plan.usable_pcpus:
        assigned = plan.pcpu_specs.get(pid, [])
        if not assigned:
            continue
        result = plan.admission_for(pid)
        u = result.utils
        per_pcpu[str(pid)] = {
            "vcpus": [s.id for s in assigned],
            "u1_1": str(u.u1_1),
            "u1_1_dec": frac6(u.u1_1),
            "u2_1": str(u.u2_1),
            "u2_1_dec": frac6(u.u2_1),
            "u2_2": str(u.u2_2),
            "u2_2_dec": frac6(u.u2_2),
            "x": str(result.x) if result.x is not None else None,
            "x_dec": frac6(result.x) if result.x is not None else None,
            "bound": str(result.bound) if result.bound is not None else None,
            "bound_dec": frac6(result.bound)
            if result.bound is not None
            else None,
        }
    doc = {
        "num_pcpus": scenario.num_pcpus,
        "reserved_pcpus": scenario.reserved_pcpus,
        "assignments": {
            str(vid): pid for vid, pid in sorted(plan.assignments.items())
        },
        "vcpu_vms": {
            str(s.id): vm_names[s.vm_id] for s in specs
        },
        "per_pcpu": per_pcpu,
        "rejected": [
            {"vcpu": vid, "reason": why} for vid, why in plan.rejected
        ],
        "used_cores": plan.used_cores,
        "idle_cores": plan.idle_cores,
    }
    return doc, plan.all_placed()


def cmd_admit(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    doc, ok = _plan_json(scenario)
    print(json.dumps(doc, indent=2))
    return EXIT_OK if ok else EXIT_REJECTED


SWEEP_PARAMS = ("vm_count", "rate", "theta0", "policy", "seed")


def _parse_values(param: str, spec: str) -> list:
    if param == "policy":
        return spec.split(",")
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    if param == "rate":
        return [float(v) for v in spec.split(",")]
    return [int(v) for v in spec.split(",")]


def _sweep_one(scenario_path: str, param: str, value, out_dir: str):
    scenario = load_scenario(scenario_path, {param: value})
    sim = Simulation(scenario, collect_records=False)
    trace = sim.run()
    summary = _write_outputs(trace, Path(out_dir))
    return value, summary


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        print(
            f"error: param must be one of {', '.join(SWEEP_PARAMS)}",
            file=sys.stderr,
        )
        return EXIT_INPUT
    try:
        values = _parse_values(args.param, args.values)
        load_scenario(args.scenario, {args.param: values[0]})
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = {
        value: str(out_root / f"{args.param}={value}") for value in values
    }
    workers = int(os.environ.get("AKITA_SIM_THREADS", "0")) or min(
        len(values), os.cpu_count() or 1
    )

    results = {}
    failures = []
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            futures = {
                pool.submit(
                    _sweep_one, args.scenario, args.param, value, jobs[value]
                ): value
                for value in values
            }
            for fut in concurrent.futures.as_completed(futures):
                value = futures[fut]
                try:
                    results[value] = fut.result()[1]
                except PlacementRejected as exc:
                    failures.append((value, EXIT_REJECTED, str(exc)))
                except ConfigError as exc:
                    failures.append((value, EXIT_INPUT, str(exc)))
    else:
        for value in values:
            try:
                results[value] = _sweep_one(
                    args.scenario, args.param, value, jobs[value]
                )[1]
            except PlacementRejected as exc:
                failures.append((value, EXIT_REJECTED, str(exc)))
            except ConfigError as exc:
                failures.append((value, EXIT_INPUT, str(exc)))

    with open(out_root / "sweep.csv", "w") as fp:
        fp.write(
            "param,value,vm,arrived,completed,mean_us,p99_us,p999_us,"
            "misses,used_cores,idle_cores\n"
        )
        for value in values:
            summary = results.get(value)
            if summary is None:
                continue
            for name, entry in summary["vms"].items():
                rtt = entry["rtt"] or {}
                fp.write(
                    f"{args.param},{value},{name},"
                    f"{entry['requests']['arrived']},"
                    f"{entry['requests']['completed']},"
                    f"{rtt.get('mean_us', '')},{rtt.get('p99_us', '')},"
                    f"{rtt.get('p999_us', '')},{entry['deadline_misses']},"
                    f"{summary['used_cores']},"
                    f"{summary['placement_idle_cores']}\n"
                )

    for value, code, message in failures:
        print(f"error: {args.param}={value}: {message}", file=sys.stderr)
    if failures:
        return max(code for _, code, _ in failures)
    if not args.quiet:
        print(f"sweep complete: {len(results)} runs in {out_root}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="akitasim",
        description=(
            "Discrete-event simulator of a virtualized multi-core host "
            "with mixed-criticality vCPU scheduling"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument(
        "--policy", choices=("akita", "edf", "credit"), default=None
    )
    p_run.add_argument(
        "--format", choices=("text", "csv", "json"), default="text"
    )
    p_run.add_argument("--quiet", action="store_true")
    p_run.add_argument(
        "--no-trace",
        action="store_true",
        help="skip per-event trace collection (large runs)",
    )
    p_run.set_defaults(func=cmd_run)

    p_admit = sub.add_parser(
        "admit", help="print the first-fit placement plan as JSON"
    )
    p_admit.add_argument("scenario")
    p_admit.set_defaults(func=cmd_admit)

    p_sweep = sub.add_parser("sweep", help="run a scenario across values")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument(
        "--values", required=True, help="comma list or lo:hi range"
    )
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--quiet", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
