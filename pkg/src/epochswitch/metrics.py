"""Phase breakdowns and scaling series extracted from traces."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

from .core_model import EpochChange
from .sim.trace import Trace
from .verifier import TraceModel

BREAKDOWN_FIELDS = ("transition", "old_epoch", "new_epoch", "old_members", "new_members",
                    "ec_commit", "ready", "handover", "activation", "t1", "t2", "t3", "total")
SCALING_FIELDS = ("transition", "members", "total")


@dataclass(frozen=True)
class PhaseBreakdown:
    """One completed transition.

    Each boundary is the simulated time by which every correct participant reached it:
    EpochChange committed at the old members, Ready submitted by the incoming members,
    handover formed at old and incoming replicas, activation at the incoming members.
    Boundaries are made monotone, so t1 + t2 + t3 == activation - ec_commit.
    """

    old_epoch: int
    new_epoch: int
    old_members: int
    new_members: int
    ec_commit: int
    ready: int
    handover: int
    activation: int

    @property
    def transition(self) -> str:
        return f"{self.old_epoch}->{self.new_epoch}"

    @property
    def t1(self) -> int:
        return self.ready - self.ec_commit

    @property
    def t2(self) -> int:
        return self.handover - self.ready

    @property
    def t3(self) -> int:
        return self.activation - self.handover

    @property
    def total(self) -> int:
        return self.activation - self.ec_commit

    def row(self) -> dict:
        return {k: getattr(self, k) for k in BREAKDOWN_FIELDS}


def phase_breakdowns(trace: Trace, model: Optional[TraceModel] = None) -> list[PhaseBreakdown]:
    """Breakdowns for every transition that activated, ordered by old epoch."""
    m = model or TraceModel(trace)
    times = {ev["i"]: ev["t"] for ev in trace.events}
    out = []
    for old, cert in sorted(m.certs().items()):
        new = cert.next_config.epoch
        old_cfg, new_cfg = m.configs.get(old), m.configs.get(new)
        if old_cfg is None or new_cfg is None:
            continue
        acts = [a["t"] for a in m.activations if a["epoch"] == new]
        if not acts:
            continue
        ec_pos = _ec_position(m, old, new, cert.h)
        if ec_pos is None:
            continue
        ec = [times[i] for (r, p), i in m.commit_ev.items()
              if p == ec_pos and r.startswith(f"{old}:")]
        ready = [ev["t"] for ev in trace.of("submit_ready")
                 if ev["to"] == new and m.correct(ev["r"])]
        ho = [ev["t"] for ev in m.cert_events.get(old, [])]
        if not (ec and ready and ho):
            continue
        b1 = max(ec)
        b2 = max(b1, max(ready))
        b3 = max(b2, max(ho))
        b4 = max(b3, max(acts))
        out.append(PhaseBreakdown(old, new, len(old_cfg.members), len(new_cfg.members),
                                  b1, b2, b3, b4))
    return out


def _ec_position(m: TraceModel, old: int, new: int, h: int) -> Optional[int]:
    found = None
    for p in sorted(m.inner.get(old, {})):
        if p > h:
            break
        c = m.decoded(old, p)
        if isinstance(c, EpochChange) and c.next.epoch == new:
            found = p
    return found


def scaling_rows(rows: list[PhaseBreakdown]) -> list[dict]:
    return [{"transition": f"{b.old_members}->{b.new_members}", "members": b.new_members,
             "total": b.total} for b in rows]


def to_csv(rows: list[dict], fields: tuple[str, ...]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in fields})
    return buf.getvalue()


def table(rows: list[dict], fields: tuple[str, ...]) -> str:
    cells = [list(fields)] + [[str(r[k]) for k in fields] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(fields))]
    lines = ["  ".join(c[i].rjust(widths[i]) for i in range(len(fields))) for c in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


__all__ = ["BREAKDOWN_FIELDS", "SCALING_FIELDS", "PhaseBreakdown", "phase_breakdowns",
           "scaling_rows", "table", "to_csv"]
