"""Command-line front end.

Subcommands::

    stlagc check    SCENARIO            static checks + composition certificate
    stlagc run      SCENARIO [...]      simulate, monitor, write trace + verdicts
    stlagc monitor  TRACE SCENARIO      re-derive all verdicts from a trace file
    stlagc plotdata TRACE TASK          funnel band of one task for plotting

Exit code 0 means every check or verdict passed, 1 means some failed,
2 means the inputs were unusable.  ``STLAGC_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .pipeline import monitor_run, prepare, simulate
from .scenario import ScenarioError, load_scenario
from .sim import SimConfig, export_csv, read_csv_columns, trajectory_from_csv
from .stl_core import CoverageError

log = logging.getLogger("stlagc.cli")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _emit(report: dict, path: Path | None):
    text = json.dumps(report, indent=2)
    print(text)
    if path is not None:
        path.write_text(text + "\n")


def cmd_check(args) -> int:
    try:
        prepared = prepare(load_scenario(args.scenario))
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit(prepared.as_dict(), Path(args.out) if args.out else None)
    return EXIT_OK if prepared.passed else EXIT_FAIL


def _run_one(path: str, args) -> int:
    scenario = load_scenario(path)
    prepared = prepare(scenario)
    if not prepared.passed:
        _emit(prepared.as_dict(), None)
        log.error("%s: static checks failed; not simulating", scenario.name)
        return EXIT_FAIL
    defaults = scenario.sim_defaults
    horizon = args.horizon if args.horizon is not None else defaults.get("horizon")
    if horizon is None:
        print(f"error: {path}: no horizon in scenario or flags", file=sys.stderr)
        return EXIT_USAGE
    cfg = SimConfig(
        dt=args.dt if args.dt is not None else defaults.get("dt", 0.005),
        horizon=horizon,
        record_stride=defaults.get("record_stride", 1),
    )
    traj, wall = simulate(prepared, cfg, backend=args.backend)
    report = monitor_run(
        prepared, traj, eps=args.eps, delta=args.delta, wall_seconds=wall
    )

    if args.out:
        trace_path = Path(args.out)
        if len(args.scenario) > 1:
            trace_path.mkdir(parents=True, exist_ok=True)
            trace_path = trace_path / f"{scenario.name}.trace.csv"
    else:
        trace_path = Path(f"{scenario.name}.trace.csv")
    export_csv(traj, trace_path)
    verdict = report.as_dict()
    verdict["trace"] = str(trace_path)
    if args.design_report:
        verdict["design"] = prepared.as_dict()
    _emit(verdict, trace_path.with_suffix(".verdict.json"))
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_run(args) -> int:
    try:
        if args.jobs > 1 and len(args.scenario) > 1:
            import concurrent.futures as cf

            with cf.ProcessPoolExecutor(max_workers=args.jobs) as pool:
                codes = list(pool.map(_run_one_star, [(p, args) for p in args.scenario]))
        else:
            codes = [_run_one(p, args) for p in args.scenario]
    except (ScenarioError, CoverageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return max(codes)


def _run_one_star(pair):
    return _run_one(*pair)


def cmd_monitor(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        prepared = prepare(scenario)
        traj = trajectory_from_csv(args.trace, scenario.system, prepared.funnels)
        report = monitor_run(prepared, traj, eps=args.eps, delta=args.delta)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit(report.as_dict(), Path(args.out) if args.out else None)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_plotdata(args) -> int:
    try:
        cols = read_csv_columns(args.trace)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    needed = [f"rho_{args.task}", f"lower_{args.task}", f"upper_{args.task}"]
    if any(c not in cols for c in needed):
        print(f"error: trace has no task {args.task}", file=sys.stderr)
        return EXIT_USAGE
    lines = ["t,rho,lower,upper"]
    for k in range(len(cols["t"])):
        lines.append(
            "%.17g,%.17g,%.17g,%.17g"
            % (cols["t"][k], cols[needed[0]][k], cols[needed[1]][k], cols[needed[2]][k])
        )
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stlagc",
        description="Funnel-based distributed controllers for timed tasks "
        "on coupled multi-agent systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="static checks and certificate")
    p_check.add_argument("scenario")
    p_check.add_argument("--out", help="also write the JSON report here")
    p_check.set_defaults(func=cmd_check)

    p_run = sub.add_parser("run", help="simulate and monitor scenarios")
    p_run.add_argument("scenario", nargs="+")
    p_run.add_argument("--dt", type=float, default=None)
    p_run.add_argument("--horizon", type=float, default=None)
    p_run.add_argument("--out", help="trace CSV path (directory in batch mode)")
    p_run.add_argument("--design-report", action="store_true",
                       help="embed designed funnel parameters in the verdict")
    p_run.add_argument("--eps", type=float, default=None,
                       help="assumption expansion for the uniform-strong route")
    p_run.add_argument("--delta", type=float, default=None,
                       help="uniform-strong shift (default 10 grid steps)")
    p_run.add_argument("--seed", type=int, default=None,
                       help="reserved; no stochastic features yet")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="run independent scenarios concurrently")
    p_run.add_argument("--backend", choices=("compiled", "python"), default=None)
    p_run.set_defaults(func=cmd_run)

    p_mon = sub.add_parser("monitor", help="recompute verdicts from a trace")
    p_mon.add_argument("trace")
    p_mon.add_argument("scenario")
    p_mon.add_argument("--eps", type=float, default=None)
    p_mon.add_argument("--delta", type=float, default=None)
    p_mon.add_argument("--out")
    p_mon.set_defaults(func=cmd_monitor)

    p_plot = sub.add_parser("plotdata", help="funnel band of one task")
    p_plot.add_argument("trace")
    p_plot.add_argument("task", type=int)
    p_plot.add_argument("--out")
    p_plot.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("STLAGC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
