"""Experiment orchestration and report emission."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path
from typing import Optional, Union

from .metrics import (
    BREAKDOWN_FIELDS,
    SCALING_FIELDS,
    PhaseBreakdown,
    phase_breakdowns,
    scaling_rows,
    table,
    to_csv,
)
from .sim.harness import run
from .sim.scenario import Scenario, parse_scenario
from .sim.trace import Trace
from .verifier import Report, TraceModel, verify_trace

EXPERIMENTS = ("worked_example", "four_transitions", "preemption", "post_h_commits",
               "equivocation", "cross_protocol", "over_threshold", "exval", "double_commit")


@dataclass
class ExperimentResult:
    name: str
    scenario: Scenario
    trace: Trace
    report: Report
    breakdowns: list[PhaseBreakdown]

    @property
    def ok(self) -> bool:
        return self.report.ok


def scenario_path(name: str) -> Path:
    return Path(str(files("epochswitch") / "scenarios" / f"{name}.yaml"))


def load_scenario(target: str, seed: Optional[int] = None,
                  horizon: Optional[int] = None) -> Scenario:
    """A bundled experiment name or a path to a scenario file."""
    p = Path(target)
    if target in EXPERIMENTS and not p.exists():
        p = scenario_path(target)
    elif not p.exists():
        raise FileNotFoundError(f"no scenario file or bundled experiment named {target!r}")
    sc = parse_scenario(p)
    changes: dict = {}
    if seed is not None:
        changes["seed"] = seed
    if horizon is not None:
        changes["horizon"] = horizon
    if changes:
        sc = dataclasses.replace(sc, **changes)
        sc.validate()
    return sc


def run_scenario(sc: Scenario) -> ExperimentResult:
    trace = run(sc)
    model = TraceModel(trace)
    report = verify_trace(trace)
    return ExperimentResult(sc.name, sc, trace, report, phase_breakdowns(trace, model))


def run_experiment(name: str, seed: Optional[int] = None,
                   horizon: Optional[int] = None) -> ExperimentResult:
    return run_scenario(load_scenario(name, seed, horizon))


def _delay_note(traces: list[Trace]) -> str:
    models = sorted({tuple(t.header.get("delay", ())) for t in traces})
    desc = ", ".join(f"[{a}, {b}]" for a, b in models)
    return f"delay model: uniform per-message latency in {desc} simulated ticks\n"


def write_report(breakdowns: list[tuple[str, PhaseBreakdown]], traces: list[Trace],
                 out_dir: Union[str, Path]) -> list[Path]:
    """Breakdown and scaling tables plus plot-ready CSVs."""
    if not breakdowns:
        raise ValueError("no completed transitions to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    brows = [{"experiment": n, **b.row()} for n, b in breakdowns]
    srows = [{"experiment": n, **r} for n, b in breakdowns for r in scaling_rows([b])]
    bf = ("experiment",) + BREAKDOWN_FIELDS
    sf = ("experiment",) + SCALING_FIELDS
    written = {
        "breakdown.csv": to_csv(brows, bf),
        "scaling.csv": to_csv(srows, sf),
        "report.txt": (_delay_note(traces)
                       + "\nphase breakdown (t1 EpochChange->Ready, t2 Ready->handover, "
                         "t3 handover->activation)\n" + table(brows, bf)
                       + "\ntransition time by member count\n" + table(srows, sf)),
    }
    paths = []
    for fname, text in written.items():
        p = out / fname
        p.write_text(text)
        paths.append(p)
    return paths


def emit_report(results: list[ExperimentResult], out_dir: Union[str, Path]) -> list[Path]:
    """Per experiment: trace, verdicts and metrics. Writes a combined report at the top."""
    if not results:
        raise ValueError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in results:
        d = out / r.name
        d.mkdir(exist_ok=True)
        r.trace.write(d / "trace.jsonl")
        (d / "verdicts.txt").write_text(r.report.text())
        paths += [d / "trace.jsonl", d / "verdicts.txt"]
        if r.breakdowns:
            paths += write_report([(r.name, b) for b in r.breakdowns], [r.trace], d)
    pairs = [(r.name, b) for r in results for b in r.breakdowns]
    if pairs:
        paths += write_report(pairs, [r.trace for r in results], out)
    return paths


def report_from_dir(results_dir: Union[str, Path]) -> list[Path]:
    """Recompute metrics from every trace.jsonl below ``results_dir``."""
    root = Path(results_dir)
    traces = sorted(root.rglob("*.jsonl"))
    if not traces:
        raise ValueError(f"no traces under {root}")
    pairs = []
    loaded = []
    for p in traces:
        tr = Trace.loads(p.read_text())
        loaded.append(tr)
        name = tr.header.get("name") or p.parent.name
        pairs += [(name, b) for b in phase_breakdowns(tr)]
    return write_report(pairs, loaded, root)


__all__ = ["EXPERIMENTS", "ExperimentResult", "emit_report", "load_scenario", "report_from_dir",
           "run_experiment", "run_scenario", "scenario_path", "write_report"]
