"""Acceptance criteria; the terminal summary prints one PASS/FAIL line per criterion."""
from __future__ import annotations

import functools
import time
from collections import Counter

import pytest

from epochswitch.core_model import (
    ConsensusKind,
    Done,
    EpochChange,
    Ready,
    Transaction,
)
from epochswitch.engine import ChainLink, verify_trust_chain
from epochswitch.metrics import phase_breakdowns
from epochswitch.runner import EXPERIMENTS, emit_report, load_scenario, run_experiment
from epochswitch.sim.harness import run
from epochswitch.sim.randomized import SAFETY_CHECKS, random_scenario
from epochswitch.verifier import FAIL, PASS, TraceModel, verify_trace

from conftest import bundled_trace
from forgeries import FORGERIES

RANDOM_RUNS = 500


def tx(name: str) -> Transaction:
    return Transaction(name.encode())


def kinds(m: TraceModel, e: int) -> list:
    return [m.decoded(e, p) for p in sorted(m.inner[e])]


def quorum_facts(m: TraceModel) -> list[tuple[int, int, int, int, int]]:
    """Per correct activation: (f_old, matching Dones before it, up to it, equivocating, event)."""
    certs = m.certs()
    out = []
    for a in m.activations:
        e = a["epoch"]
        if e == m.genesis_epoch:
            continue
        (old,) = [o for o, c in certs.items() if c.next_config.epoch == e]
        cfg, cert = m.configs[old], certs[old]
        before, at, equiv = set(), set(), 0
        for p in sorted(m.inner[e]):
            if p > a["pos"]:
                break
            c = m.decoded(e, p)
            if not isinstance(c, Done) or not cfg.is_member(c.signer) or not c.sig_ok():
                continue
            if c.cert != cert:
                equiv += c.cert.old_epoch == old
                continue
            at.add(c.signer.key)
            if p < a["pos"]:
                before.add(c.signer.key)
        out.append((cfg.f, len(before), len(at), equiv, a["i"]))
    return out


def halts_after_quorum(m: TraceModel) -> bool:
    certs = m.certs()
    for h in m.halts:
        if h["ev"] != "halt":
            continue
        cert = certs[h["epoch"]]
        cfg = m.configs[h["epoch"]]
        new = cert.next_config.epoch
        signers = set()
        quorum_pos = None
        for p in sorted(m.inner.get(new, {})):
            c = m.decoded(new, p)
            if isinstance(c, Done) and c.cert == cert and cfg.is_member(c.signer) and c.sig_ok():
                signers.add(c.signer.key)
                if len(signers) == cfg.f + 1:
                    quorum_pos = p
                    break
        if quorum_pos is None or m.first_commit[(new, quorum_pos)] > h["i"]:
            return False
    return True


@functools.lru_cache(maxsize=1)
def random_suite():
    rows = []
    t0 = time.monotonic()
    for seed in range(RANDOM_RUNS):
        sc = random_scenario(seed)
        trace = run(sc, trace_messages=False)
        m = TraceModel(trace)
        rows.append((seed, sc, verify_trace(trace), quorum_facts(m), halts_after_quorum(m)))
    return rows, time.monotonic() - t0


# -------------------------------------------------------------------------------------------


@pytest.mark.acceptance(1, "golden worked example")
def test_golden_worked_example():
    t0 = time.monotonic()
    trace = run(load_scenario("worked_example"))
    rep = verify_trace(trace)
    elapsed = time.monotonic() - t0
    assert rep.ok, rep.text()
    m = TraceModel(trace)

    l1 = kinds(m, 1)
    want1 = [tx("T1"), tx("T2"), EpochChange, tx("T3"), tx("T4"), Ready, Ready, Ready, Ready,
             tx("T5"), tx("T6")]
    assert len(l1) == len(want1)
    for got, want in zip(l1, want1):
        assert got == want if isinstance(want, Transaction) else isinstance(got, want)
    assert m.cert(1).h == 9

    l2 = kinds(m, 2)
    want2 = [Done, Done, tx("T5"), tx("T7"), tx("T8"), Done, Done]
    assert len(l2) == len(want2)
    for got, want in zip(l2, want2):
        assert got == want if isinstance(want, Transaction) else isinstance(got, want)

    acts = {a["pos"] for a in m.activations if a["epoch"] == 2}
    assert acts == {2}

    outer = [f"T{k}" for k in (1, 2, 3, 4, 5, 7, 8)]
    ids = {tx(n).id.hex(): n for n in ("T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8")}
    for r in m.replicas():
        evs = m.emits.get(r, [])
        if r.startswith("1:"):
            assert [ids[e["tx"]] for e in evs] == outer[:4]
        else:
            assert [ids[e["tx"]] for e in evs] == outer[2:]
            assert m.syncs[r]["outer_len"] == 2
        assert not [e for e in evs if e["se"] == 1 and ids[e["tx"]] in ("T5", "T6")]
    assert elapsed < 5.0


@pytest.mark.acceptance(2, "safety property suite")
def test_safety_property_suite():
    rows, elapsed = random_suite()
    assert len(rows) >= 500
    bad = [(seed, v.name, v.explanation) for seed, _, rep, _, _ in rows
           for v in rep.verdicts if v.name in SAFETY_CHECKS and v.status != PASS]
    assert bad == []

    cover = Counter()
    for _, sc, _, _, _ in rows:
        n_tr = sum(1 for ev in sc.schedule if ev.kind == "epoch_change")
        cover[f"transitions={n_tr}"] += 1
        if len({e.consensus for e in sc.epochs}) > 1:
            cover["mixed kinds"] += 1
        for ev in sc.schedule:
            if ev.kind in ("crash", "equivocate_done"):
                cover[ev.kind] += 1
            if ev.kind.startswith("delay_"):
                cover["extra delay"] += 1
        if sc.max_delay > sc.min_delay:
            cover["random delay"] += 1
    for key in ("transitions=1", "transitions=2", "transitions=3", "transitions=4",
                "mixed kinds", "crash", "equivocate_done", "extra delay", "random delay"):
        assert cover[key] > 0, key
    assert elapsed < 600


@pytest.mark.acceptance(3, "cross-protocol modularity")
def test_cross_protocol_modularity():
    trace = bundled_trace("cross_protocol")
    rep = verify_trace(trace)
    assert rep.ok, rep.text()
    assert all(v.status == PASS for v in rep.verdicts)
    m = TraceModel(trace)
    assert [m.configs[e].consensus_kind for e in sorted(m.configs)] == [
        ConsensusKind.SEQUENCER, ConsensusKind.MULTILANE, ConsensusKind.SEQUENCER]
    links = []
    certs = m.certs()
    e = m.genesis_epoch
    while e in certs:
        cert = certs[e]
        new = cert.next_config.epoch
        dones = tuple(c for c in kinds(m, new) if isinstance(c, Done) and c.cert == cert)
        links.append(ChainLink(cert, dones))
        e = new
    assert len(links) == 2
    assert verify_trust_chain(links, m.configs[m.genesis_epoch]).ok


@pytest.mark.acceptance(4, "post-h truncation")
def test_post_h_truncation():
    trace = bundled_trace("post_h_commits")
    rep = verify_trace(trace)
    assert rep.ok, rep.text()
    m = TraceModel(trace)
    h = m.cert(1).h
    at_or_below = {c.id for c in kinds(m, 1)[:h] if isinstance(c, Transaction)}
    past = [c for c in kinds(m, 1)[h:] if isinstance(c, Transaction) and c.id not in at_or_below]
    assert len(past) >= 2
    resubmitted = {}
    for ev in trace.of("client_resubmit"):
        resubmitted.setdefault(ev["tx"], ev["t"])
    for c in past:
        txid = c.id.hex()
        first_emit = None
        for r in m.replicas():
            mine = [e for e in m.emits.get(r, []) if e["tx"] == txid]
            assert len(mine) <= 1
            for e in mine:
                assert e["se"] == 2
                first_emit = e["t"] if first_emit is None else min(first_emit, e["t"])
        assert first_emit is not None, f"{txid[:12]} never reached the outer log"
        assert txid in resubmitted and resubmitted[txid] < first_emit
        new_members = [r for r in m.replicas() if r.startswith("2:")]
        assert all(any(e["tx"] == txid for e in m.emits.get(r, [])) for r in new_members)


@pytest.mark.acceptance(5, "preemption")
def test_preemption():
    trace = bundled_trace("preemption")
    rep = verify_trace(trace)
    assert rep.ok, rep.text()
    assert rep.get("no_post_preemption_activation").status == PASS
    m = TraceModel(trace)
    assert trace.header["faulty"] == {"2:3": "crash"}
    activated = {a["epoch"] for a in m.activations}
    assert 2 not in activated and 3 in activated
    assert not any(a["epoch"] == 2 for a in trace.of("activate"))
    assert m.cert(1).next_config.epoch == 3
    aborted = {e["r"] for e in trace.of("abort") if e["target"] == 2}
    assert aborted == {"2:0", "2:1", "2:2"}


@pytest.mark.acceptance(6, "quorum boundaries")
def test_quorum_boundaries():
    facts = []
    halts_ok = []
    for name in EXPERIMENTS:
        m = TraceModel(bundled_trace(name))
        facts += quorum_facts(m)
        halts_ok.append(halts_after_quorum(m))
    rows, _ = random_suite()
    for _, _, rep, q, ok in rows:
        facts += q
        halts_ok.append(ok)
        assert rep.get("activation_quorum").status == PASS
        assert rep.get("no_pre_quorum_shutdown").status == PASS
    assert facts
    for f, before, at, _, _ in facts:
        assert before == f and at == f + 1
    assert all(halts_ok)
    # some activations had f equivocating Dones committed alongside the honest ones
    assert any(equiv > 0 for _, _, _, equiv, _ in facts)


@pytest.mark.acceptance(7, "evaluation shape")
def test_evaluation_shape():
    trace = bundled_trace("four_transitions")
    rep = verify_trace(trace)
    assert rep.ok, rep.text()
    rows = phase_breakdowns(trace)
    assert [(r.old_members, r.new_members) for r in rows] == [(4, 4), (4, 7), (7, 10), (10, 13)]
    for r in rows:
        assert r.t2 > r.t1 and r.t2 > r.t3, r.row()
    totals = [r.total for r in rows]
    assert max(totals) < 2 * min(totals), totals


@pytest.mark.acceptance(8, "determinism")
def test_determinism(tmp_path):
    first = [run_experiment(n) for n in EXPERIMENTS]
    second = [run_experiment(n) for n in EXPERIMENTS]
    for a, b in zip(first, second):
        assert a.trace.dumps() == b.trace.dumps(), a.name
        assert a.report.text() == b.report.text(), a.name
    emit_report(first, tmp_path / "a")
    emit_report(second, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                     if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                     if p.is_file())
    assert files_a == files_b and files_a
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    for seed in (0, 1, 2):
        assert run(random_scenario(seed)).dumps() == run(random_scenario(seed)).dumps()


@pytest.mark.acceptance(9, "negative controls")
def test_negative_controls():
    missed = []
    for check, forge in FORGERIES.items():
        if verify_trace(forge()).get(check).status != FAIL:
            missed.append(check)
    assert missed == []
    assert len(FORGERIES) == 14
