"""Command-line entry point: ``gridsentry run | topo | structure``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 finished but at least one placement hit the solver timeout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .case_model import CaseError
from .experiment import (
    ConfigError,
    ExperimentConfig,
    PipelineError,
    compare_topological,
    load_experiment_case,
    run_experiment,
    structure_at,
    write_matrix_csv,
)
from .powerflow import PowerFlowError, solve_powerflow
from .state import StateVector

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TIMEOUT = 4


def _add_case_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", required=True, help="case file (.m or .json) or bundled name, e.g. case14")
    p.add_argument("--format", choices=["m", "json"], default=None, help="override format detection")
    p.add_argument("--strict", action="store_true", help="reject negative series reactance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridsentry", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="time-varying placement over a simulated trajectory")
    _add_case_args(run)
    run.add_argument("--steps", type=int, default=100)
    run.add_argument("--window", type=int, default=None, help="observation window M (default 2N-1)")
    run.add_argument("--sigma2", type=float, default=1.0, help="state noise variance")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--branches", type=int, default=None, help="edge budget K (default: physical branch count)")
    run.add_argument("--vm-min", type=float, default=0.2)
    run.add_argument("--vm-max", type=float, default=2.0)
    run.add_argument("--flat-start", action="store_true", help="start from theta=0, V=1 instead of the solved power flow")
    run.add_argument("--timeout", type=float, default=60.0, help="per-step solver timeout, seconds")
    run.add_argument("--out", default="gridsentry-out")

    topo = sub.add_parser("topo", help="static placement on the physical topology")
    _add_case_args(topo)
    topo.add_argument("--timeout", type=float, default=60.0)

    st = sub.add_parser("structure", help="dump E and C at one operating point")
    _add_case_args(st)
    st.add_argument("--at", choices=["solved", "flat"], default="solved")
    st.add_argument("--branches", type=int, default=None)
    st.add_argument("--out", default=".")
    return parser


def _run(args) -> int:
    config = ExperimentConfig(
        case=args.case, format=args.format, steps=args.steps, window=args.window,
        sigma2=args.sigma2, seed=args.seed, branches=args.branches, vm_min=args.vm_min,
        vm_max=args.vm_max, out=args.out, strict=args.strict, flat_start=args.flat_start,
        timeout=args.timeout,
    )
    report = run_experiment(config)
    summary = report.summary()
    print(f"{report.config['case_name']}: {summary['steps']} steps, PMU count "
          f"{summary['min_count']}..{summary['max_count']} (mode {summary['mode_count']}, "
          f"{summary['mode_frequency']:.0%}), {summary['distinct_configurations']} distinct placements")
    print(f"outputs in {args.out}")
    if report.timeouts:
        print(f"warning: {report.timeouts} step(s) hit the solver timeout", file=sys.stderr)
        return EXIT_TIMEOUT
    return EXIT_OK


def _topo(args) -> int:
    config = ExperimentConfig(case=args.case, format=args.format, strict=args.strict, timeout=args.timeout)
    rep = compare_topological(config)
    print(json.dumps({"case": rep.case_name, "count": rep.count, "buses": rep.buses,
                      "d": rep.d, "optimal": rep.optimal}))
    return EXIT_OK if rep.optimal else EXIT_TIMEOUT


def _structure(args) -> int:
    case = load_experiment_case(args.case, args.format, args.strict)
    state = StateVector.flat(case.N, case.slack) if args.at == "flat" else solve_powerflow(case)
    E, C = structure_at(case, state, args.branches)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "E.csv", E.E)
    write_matrix_csv(out / "C.csv", C.C, integer=True)
    print(f"{case.name} at {args.at} state: wrote E.csv and C.csv to {out} "
          f"({C.branch_count} edges, threshold {C.threshold:.6g}{', tie' if C.tie else ''})")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _run, "topo": _topo, "structure": _structure}
    try:
        return handlers[args.command](args)
    except (ConfigError, CaseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, PowerFlowError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
