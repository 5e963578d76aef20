"""Command line: run scenarios, verify traces, rebuild reports."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from .runner import EXPERIMENTS, emit_report, load_scenario, report_from_dir, run_scenario
from .sim.scenario import ScenarioError
from .sim.trace import Trace
from .verifier import verify_trace

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _run(args: argparse.Namespace) -> int:
    targets = list(EXPERIMENTS) if args.targets == ["all"] else args.targets
    results = []
    status = EXIT_OK
    for t in targets:
        try:
            sc = load_scenario(t, args.seed, args.horizon)
        except (ScenarioError, FileNotFoundError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        res = run_scenario(sc)
        results.append(res)
        print(f"== {res.name} (seed {sc.seed})")
        print(res.report.text(), end="")
        for b in res.breakdowns:
            print(f"  {b.transition}: t1={b.t1} t2={b.t2} t3={b.t3} total={b.total}")
        if not res.ok:
            status = EXIT_FAIL
            if args.fail_fast:
                break
    try:
        paths = emit_report(results, args.out_dir)
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {len(paths)} files under {args.out_dir}")
    return status


def _verify(args: argparse.Namespace) -> int:
    try:
        trace = Trace.loads(Path(args.trace).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: cannot read trace: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not trace.header:
        print(f"error: {args.trace} has no trace header", file=sys.stderr)
        return EXIT_USAGE
    report = verify_trace(trace, horizon=args.horizon)
    print(report.text(), end="")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verdicts.txt").write_text(report.text())
    return EXIT_OK if report.ok else EXIT_FAIL


def _report(args: argparse.Namespace) -> int:
    try:
        paths = report_from_dir(args.results_dir)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for p in paths:
        print(p)
    print((Path(args.results_dir) / "report.txt").read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epochswitch",
                                 description="Epoch reconfiguration simulator and trace checker.")
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run scenario files or bundled experiments")
    r.add_argument("targets", nargs="+",
                   help=f"scenario file, experiment name ({', '.join(EXPERIMENTS)}) or 'all'")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--horizon", type=int, help="override the simulated horizon")
    r.add_argument("--out-dir", default="results", help="where traces and reports go")
    r.add_argument("--fail-fast", action="store_true", help="stop at the first failing run")
    r.set_defaults(func=_run)

    v = sub.add_parser("verify", help="check a trace file")
    v.add_argument("trace")
    v.add_argument("--horizon", type=int, help="liveness horizon (default: from the trace)")
    v.add_argument("--out-dir", help="also write verdicts.txt here")
    v.set_defaults(func=_verify)

    p = sub.add_parser("report", help="rebuild breakdown and scaling tables from traces")
    p.add_argument("results_dir")
    p.set_defaults(func=_report)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
