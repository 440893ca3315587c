"""Command-line entry point: ``qoealloc <command> SCENARIO``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .allocation import AllocationResult, brute_force_oracle, solve
from .errors import ConfigError, DataIOError, InfeasibleError, OracleBudgetError, ScenarioError
from .scenario import (
    ENV_OUT_DIR,
    MODES,
    dumps,
    emit_report,
    load_scenario,
    run_experiment,
    solve_problem,
)
from .sim import allocation_to_sim, run

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the scenario seed")
    parser.add_argument(
        "--out-dir",
        default=default,
        help=f"output directory (default: ${ENV_OUT_DIR} or ./out)",
    )
    parser.add_argument(
        "--format", choices=("json", "csv"), default=argparse.SUPPRESS if suppress else "json",
        help="report format",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qoealloc", description=__doc__)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    common.add_argument("scenario", help="scenario JSON file")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="check a scenario file")

    p = sub.add_parser("solve", parents=[common], help="allocation only, for every scenario point")
    p.add_argument("--mode", choices=MODES, help="override the solver mode")
    p.add_argument("--timing", action="store_true", help="include solver wall time")

    p = sub.add_parser("simulate", parents=[common], help="managed simulation of a saved allocation")
    p.add_argument("--allocation", required=True, help="allocation.json written by 'solve'")
    p.add_argument("--point", help="point id inside the allocation file")
    p.add_argument("--trace", help="write a per-packet trace CSV here")

    p = sub.add_parser("run", parents=[common], help="solve, simulate and report the base mix")
    p.add_argument("--no-best-effort", action="store_true", help="skip the unmanaged baseline")
    p.add_argument("--timing", action="store_true", help="include wall times in the report")

    p = sub.add_parser("sweep", parents=[common], help="run every point of the sweep")
    p.add_argument("--list", action="store_true", help="only print the expanded points")
    p.add_argument("--no-best-effort", action="store_true", help="skip the unmanaged baseline")
    p.add_argument("--timing", action="store_true", help="include wall times in the report")

    sub.add_parser("oracle", parents=[common], help="compare the exact solver with exhaustive search")
    return parser


def _out_dir(args) -> Path:
    return Path(args.out_dir or os.environ.get(ENV_OUT_DIR) or "out")


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def cmd_validate(args, scenario) -> int:
    points = scenario.points()
    print(f"{scenario.name}: ok ({len(scenario.topology.nodes)} nodes, {len(scenario.topology.links)} links, "
          f"{len(scenario.mix)} application types, {len(points)} point(s))")
    return EXIT_OK


def cmd_solve(args, scenario) -> int:
    mode = args.mode or scenario.solver["mode"]
    out, status = {}, EXIT_OK
    for point in scenario.points():
        try:
            result = solve_problem(scenario.problem(point), mode)
        except InfeasibleError as exc:
            out[point.id] = {"status": "failed", "reason": str(exc), "binding": exc.binding}
            print(f"{point.id}: infeasible ({exc.binding}): {exc}", file=sys.stderr)
            if not scenario.sweep_totals:
                status = EXIT_INFEASIBLE
            continue
        out[point.id] = result.to_dict(include_timing=args.timing)
        print(f"{point.id}: uv_min1={result.uv_min1} uv_min2={result.uv_min2} sum={result.utility_sum}")
    target = _out_dir(args) / "allocation.json"
    _write(target, dumps(out))
    print(f"wrote {target}")
    return status


def cmd_simulate(args, scenario) -> int:
    try:
        data = json.loads(Path(args.allocation).read_text())
    except OSError as exc:
        raise DataIOError(f"cannot read {args.allocation}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{args.allocation}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if "objectives" not in data:
        key = args.point or next(iter(sorted(data)), None)
        if key not in data:
            raise ScenarioError(f"point {key!r} not found in {args.allocation}")
        data = data[key]
        if data.get("status") == "failed":
            print(f"{key}: allocation failed, nothing to simulate", file=sys.stderr)
            return EXIT_INFEASIBLE
    try:
        result = AllocationResult.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{args.allocation}: not an allocation document ({exc})") from None
    config = allocation_to_sim(result, scenario.sim_template(), scenario.bottleneck)
    metrics = run(config, trace=args.trace)
    target = _out_dir(args) / "sim.json"
    _write(target, dumps(metrics.to_dict()))
    print(f"loss={metrics.loss} queue_delay_p95_ms={metrics.link.queue_delay_p95}")
    print(f"wrote {target}")
    return EXIT_OK


def _report(args, scenario, sweep: bool) -> int:
    report = run_experiment(
        scenario,
        sweep=sweep,
        best_effort=False if args.no_best_effort else None,
        include_timing=args.timing,
    )
    for path in emit_report(report, args.format, _out_dir(args)):
        print(f"wrote {path}")
    failed = [p for p in report.points if p.status != "ok"]
    for p in failed:
        print(f"{p.id}: {p.reason}", file=sys.stderr)
    if sweep or not failed:
        return EXIT_OK
    return EXIT_INFEASIBLE if failed[0].status == "infeasible" else EXIT_INVALID


def cmd_run(args, scenario) -> int:
    return _report(args, scenario, sweep=False)


def cmd_sweep(args, scenario) -> int:
    if args.list:
        for p in scenario.points():
            counts = " ".join(f"{t}={n}" for t, n in p.counts.items())
            print(f"{p.id} total={p.total} {counts}")
        return EXIT_OK
    if not scenario.sweep_totals:
        raise ScenarioError("scenario has no sweep section")
    return _report(args, scenario, sweep=True)


def cmd_oracle(args, scenario) -> int:
    problem = scenario.problem(scenario.base_point())
    exact = solve(problem)
    oracle = brute_force_oracle(problem)
    same = exact.to_dict()["apps"] == oracle.to_dict()["apps"] and (
        exact.uv_min1, exact.uv_min2, exact.utility_sum) == (oracle.uv_min1, oracle.uv_min2, oracle.utility_sum)
    doc = {"match": same, "exact": exact.to_dict(), "oracle": oracle.to_dict()}
    target = _out_dir(args) / "oracle.json"
    _write(target, dumps(doc))
    print(f"match={str(same).lower()} uv_min1={oracle.uv_min1} uv_min2={oracle.uv_min2} sum={oracle.utility_sum}")
    return EXIT_OK if same else EXIT_INVALID


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario = scenario.with_seed(args.seed)
        return COMMANDS[args.command](args, scenario)
    except DataIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InfeasibleError as exc:
        print(f"infeasible ({exc.binding}): {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ScenarioError, ConfigError, OracleBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
