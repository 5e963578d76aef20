"""Trace verifier: SMR properties and protocol invariants checked over a trace.

The outer-log oracle is a batch reconstruction: it concatenates each
epoch's inner log truncated at its handover point and filters the result in
one pass.  It shares no code with the incremental sanitizer.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from .core_model import (
    CodecError,
    Done,
    EpochChange,
    EpochConfig,
    HandoverCertificate,
    Ready,
    SigningKey,
    Transaction,
    decode_content,
    encode_content,
    genesis_hash,
    hash_bytes,
)
from .engine import LEGAL_STEPS, ChainLink, Phase, Role, legal_step, verify_trust_chain
from .sanitizer import EXVAL_PREDICATES
from .sim.trace import Trace

PASS, FAIL, NA = "pass", "fail", "n/a"


@dataclass(frozen=True)
class Verdict:
    name: str
    status: str
    explanation: str = ""
    events: tuple[int, ...] = ()
    subs: tuple["Verdict", ...] = ()

    @property
    def ok(self) -> bool:
        return self.status != FAIL

    def lines(self, indent: str = "") -> list[str]:
        ptr = f" @events {','.join(map(str, self.events))}" if self.events else ""
        out = [f"{indent}{self.name}: {self.status.upper()}"
               + (f" - {self.explanation}" if self.explanation else "") + ptr]
        for s in self.subs:
            out.extend(s.lines(indent + "  "))
        return out


def _pass(name: str, why: str = "") -> Verdict:
    return Verdict(name, PASS, why)


def _fail(name: str, why: str, *events: int) -> Verdict:
    return Verdict(name, FAIL, why, tuple(sorted(set(e for e in events if e is not None))))


@dataclass
class Report:
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verdicts)

    def get(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
            for s in v.subs:
                if s.name == name:
                    return s
        raise KeyError(name)

    def text(self) -> str:
        out = []
        for v in self.verdicts:
            out.extend(v.lines())
        out.append(f"overall: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(out) + "\n"


# -- oracle -----------------------------------------------------------------------------


def _client_payload(raw: bytes) -> Optional[bytes]:
    """Payload of a client transaction record, None for any other content."""
    if not raw or raw[0] != 0:
        return None
    n = int.from_bytes(raw[1:5], "big")
    return raw[5:5 + n]


@dataclass(frozen=True)
class OracleEntry:
    position: int
    txid: bytes
    source: tuple[int, int]

    def line(self) -> str:
        return f"{self.position} {self.txid.hex()} {self.source[0]} {self.source[1]}"


class OracleError(ValueError):
    pass


def oracle_outer_log(inner: dict[int, dict[int, bytes]], certs: dict[int, HandoverCertificate],
                     genesis_epoch: int, exval: Callable[[Transaction], bool],
                     stop: Optional[tuple[int, int]] = None) -> list[OracleEntry]:
    """Outer log rebuilt from the inner logs, each cut at its handover point.

    ``inner`` maps epoch -> position -> raw encoded content.  Each epoch with
    a certificate is cut at ``h``; the chain is followed through
    ``cert.next_config.epoch``.  ``stop=(e, k)`` ends the concatenation at
    position ``k`` of epoch ``e``.
    """
    seq: list[tuple[int, int, bytes]] = []
    e: Optional[int] = genesis_epoch
    seen_epochs = set()
    while e is not None:
        if e in seen_epochs:
            raise OracleError(f"certificate chain loops at epoch {e}")
        seen_epochs.add(e)
        log = inner.get(e, {})
        cert = certs.get(e)
        last = max(log, default=0)
        if cert is not None:
            last = cert.h
        if stop is not None and stop[0] == e:
            last = min(last, stop[1])
        for p in range(1, last + 1):
            if p not in log:
                raise OracleError(f"inner log of epoch {e} has no entry at position {p}")
            seq.append((e, p, log[p]))
        if stop is not None and stop[0] == e:
            break
        if cert is None:
            if stop is not None:
                raise OracleError(f"missing certificate for epoch {e}")
            break
        e = cert.next_config.epoch
    out: list[OracleEntry] = []
    seen: set[bytes] = set()
    for ep, p, raw in seq:
        payload = _client_payload(raw)
        if payload is None:
            continue
        tid = hashlib.sha256(payload).digest()
        if tid in seen or not exval(Transaction(payload)):
            continue
        seen.add(tid)
        out.append(OracleEntry(len(out) + 1, tid, (ep, p)))
    return out


def oracle_digest(entries: Iterable[OracleEntry]) -> str:
    return hash_bytes("".join(e.line() + "\n" for e in entries).encode()).hex()


# -- trace model ------------------------------------------------------------------------


def register_trace_keys(header: dict[str, Any]) -> None:
    """Rebuild the mock-signature registry for the replicas named in a trace header."""
    scheme = header.get("signature_scheme", "mock")
    if scheme != "mock" or "seed" not in header:
        return
    seed = int(header["seed"]).to_bytes(8, "big", signed=True)
    for e, hexcfg in header.get("configs", {}).items():
        cfg = EpochConfig.decode(bytes.fromhex(hexcfg))
        for m in cfg.members:
            SigningKey.derive(seed, f"{m.epoch}:{m.index}", scheme)


class TraceModel:
    """Structured view of a trace restricted to what correct replicas did."""

    def __init__(self, trace: Trace) -> None:
        self.trace = trace
        h = trace.header
        register_trace_keys(h)
        self.configs: dict[int, EpochConfig] = {
            int(e): EpochConfig.decode(bytes.fromhex(x)) for e, x in h.get("configs", {}).items()}
        self.genesis_epoch: int = int(h.get("genesis", min(self.configs, default=1)))
        self.faulty: dict[str, str] = dict(h.get("faulty", {}))
        self.exval_name = h.get("exval", "always")
        self.exval = EXVAL_PREDICATES.get(self.exval_name, EXVAL_PREDICATES["always"])
        self.problems: list[tuple[str, tuple[int, ...]]] = []

        self.inner: dict[int, dict[int, bytes]] = {}
        self.inner_ev: dict[tuple[int, int], int] = {}
        self.commit_ev: dict[tuple[str, int], int] = {}
        self.cert_events: dict[int, list[dict]] = {}
        self.emits: dict[str, list[dict]] = {}
        self.syncs: dict[str, dict] = {}
        self.activations: list[dict] = []
        self.halts: list[dict] = []
        self.phases: dict[str, list[dict]] = {}
        # first commit of each inner position at any replica that had not deviated; a
        # crashed or silent replica's commits before it stopped are genuine
        self.first_commit: dict[tuple[int, int], int] = {}
        for ev in trace.events:
            r = ev.get("r", "")
            if ev["ev"] == "commit" and (self.correct(r) or
                                         self.faulty.get(r) in ("crash", "silent")):
                self.first_commit.setdefault((ev["epoch"], ev["pos"]), ev["i"])
            if not self.correct(r):
                continue
            kind = ev["ev"]
            if kind == "commit":
                e, p = ev["epoch"], ev["pos"]
                raw = bytes.fromhex(ev["content"])
                log = self.inner.setdefault(e, {})
                prev = log.get(p)
                if prev is None:
                    log[p] = raw
                    self.inner_ev[(e, p)] = ev["i"]
                elif prev != raw:
                    self.problems.append((f"inner log {e} disagrees at position {p}",
                                          (self.inner_ev[(e, p)], ev["i"])))
                self.commit_ev[(r, p)] = ev["i"]
            elif kind == "cert":
                self.cert_events.setdefault(ev["old"], []).append(ev)
            elif kind == "emit":
                self.emits.setdefault(r, []).append(ev)
            elif kind == "sync_done":
                self.syncs[r] = ev
            elif kind == "activate":
                self.activations.append(ev)
            elif kind in ("halt", "consensus_halt"):
                self.halts.append(ev)
            elif kind == "phase":
                self.phases.setdefault(r, []).append(ev)

    def correct(self, r: str) -> bool:
        return ":" in r and not r.startswith("c:") and r not in self.faulty

    def cert(self, old: int) -> Optional[HandoverCertificate]:
        evs = self.cert_events.get(old)
        if not evs:
            return None
        return HandoverCertificate.decode(bytes.fromhex(evs[0]["cert"]))

    def certs(self) -> dict[int, HandoverCertificate]:
        out = {}
        for old in self.cert_events:
            c = self.cert(old)
            if c is not None:
                out[old] = c
        return out

    def replicas(self) -> list[str]:
        names = []
        for e in sorted(self.configs):
            for m in self.configs[e].members:
                n = f"{m.epoch}:{m.index}"
                if self.correct(n):
                    names.append(n)
        return names

    def decoded(self, e: int, p: int):
        raw = self.inner.get(e, {}).get(p)
        if raw is None:
            return None
        try:
            return decode_content(raw)
        except CodecError:
            return None

    def footer_state(self, r: str) -> Optional[dict]:
        for s in self.trace.footer.get("replicas", []):
            if s.get("replica") == r:
                return s.get("sanitizer")
        return None


def _model(trace: Trace) -> TraceModel:
    return TraceModel(trace)


# -- SMR properties -----------------------------------------------------------------------


def check_safety(trace: Trace, model: Optional[TraceModel] = None) -> Verdict:
    """No two correct replicas emit different transactions at one outer position."""
    m = model or _model(trace)
    name = "safety"
    for what, evs in m.problems:
        return _fail(name, what, *evs)
    first: dict[int, dict] = {}
    for r in m.replicas():
        for ev in m.emits.get(r, []):
            op = ev["op"]
            seen = first.get(op)
            if seen is None:
                first[op] = ev
            elif seen["tx"] != ev["tx"]:
                return _fail(name, f"outer position {op}: {seen['r']} has {seen['tx'][:12]}, "
                             f"{r} has {ev['tx'][:12]}", seen["i"], ev["i"])
    return _pass(name, f"{len(first)} outer positions agree")


def check_integrity(trace: Trace, model: Optional[TraceModel] = None) -> Verdict:
    """No transaction at two outer positions of one replica; positions are contiguous."""
    m = model or _model(trace)
    name = "integrity"
    try:
        full = oracle_outer_log(m.inner, m.certs(), m.genesis_epoch, m.exval)
    except OracleError:
        full = []
    for r in m.replicas():
        where: dict[str, dict] = {}
        expect = None
        sync = m.syncs.get(r)
        if sync is not None and sync["outer_len"] <= len(full):
            # the adopted prefix counts; its content is checked by digest in the oracle check
            for e in full[:sync["outer_len"]]:
                where[e.txid.hex()] = {"op": e.position, "i": sync["i"]}
            expect = sync["outer_len"] + 1
        for ev in m.emits.get(r, []):
            if expect is not None and ev["op"] != expect:
                return _fail(name, f"{r}: outer position {ev['op']} follows {expect - 1}", ev["i"])
            expect = ev["op"] + 1
            prev = where.get(ev["tx"])
            if prev is not None:
                return _fail(name, f"{r}: tx {ev['tx'][:12]} at outer positions {prev['op']} "
                             f"and {ev['op']}", prev["i"], ev["i"])
            where[ev["tx"]] = ev
    return _pass(name)


def _payloads(m: TraceModel) -> dict[str, bytes]:
    out = {}
    for log in m.inner.values():
        for raw in log.values():
            pl = _client_payload(raw)
            if pl is not None:
                out[hashlib.sha256(pl).hexdigest()] = pl
    return out


def check_exval(trace: Trace, model: Optional[TraceModel] = None) -> Verdict:
    """Every emitted transaction was committed somewhere and satisfies the predicate."""
    m = model or _model(trace)
    name = "exval"
    payloads = _payloads(m)
    for r in m.replicas():
        for ev in m.emits.get(r, []):
            pl = payloads.get(ev["tx"])
            if pl is None:
                return _fail(name, f"{r} emitted tx {ev['tx'][:12]} that no inner log contains",
                             ev["i"])
            if not m.exval(Transaction(pl)):
                return _fail(name, f"{r} emitted tx {ev['tx'][:12]} rejected by "
                             f"{m.exval_name}", ev["i"])
    return _pass(name, f"predicate {m.exval_name}")


def _oracle_for(m: TraceModel, r: str, full: list[OracleEntry],
                certs: dict[int, HandoverCertificate]) -> Optional[list[OracleEntry]]:
    st = m.footer_state(r)
    if st is None:
        return None
    return oracle_outer_log(m.inner, certs, m.genesis_epoch, m.exval,
                            stop=(st["epoch"], st["last_pos"]))


def replica_outer(m: TraceModel, r: str, full: list[OracleEntry]) -> tuple[list[str], Optional[str]]:
    """Export lines of a replica's outer log: adopted snapshot (checked by digest) plus emits."""
    lines: list[str] = []
    problem = None
    sync = m.syncs.get(r)
    if sync is not None:
        n = sync["outer_len"]
        if n > len(full) or oracle_digest(full[:n]) != sync["digest"]:
            problem = f"{r} adopted a snapshot of length {n} that differs from the oracle prefix"
        lines = [e.line() for e in full[:n]]
    for ev in m.emits.get(r, []):
        lines.append(f"{ev['op']} {ev['tx']} {ev['se']} {ev['sp']}")
    return lines, problem


def check_oracle(trace: Trace, model: Optional[TraceModel] = None) -> Verdict:
    """Every correct replica's outer log equals the batch reconstruction of its prefix."""
    m = model or _model(trace)
    name = "oracle"
    for what, evs in m.problems:
        return _fail(name, f"cannot reconstruct: {what}", *evs)
    certs = m.certs()
    try:
        full = oracle_outer_log(m.inner, certs, m.genesis_epoch, m.exval)
    except OracleError as exc:
        return _fail(name, f"cannot reconstruct: {exc}")
    compared = 0
    for r in m.replicas():
        if r not in m.emits and r not in m.syncs:
            continue
        got, problem = replica_outer(m, r, full)
        if problem is not None:
            return _fail(name, problem, m.syncs[r]["i"])
        try:
            want_entries = _oracle_for(m, r, full, certs)
        except OracleError as exc:
            return _fail(name, f"cannot reconstruct prefix of {r}: {exc}")
        want = [e.line() for e in (want_entries if want_entries is not None else full)]
        if want_entries is None:
            want = want[:len(got)]
        if got != want:
            k = next((i for i, (a, b) in enumerate(zip(got, want)) if a != b),
                     min(len(got), len(want)))
            evs = [e["i"] for e in m.emits.get(r, []) if e["op"] == k + 1]
            return _fail(name, f"{r} differs from the oracle at outer position {k + 1} "
                         f"(replica {len(got)} entries, oracle {len(want)})", *evs)
        compared += 1
    return _pass(name, f"{compared} replicas match, {len(full)} oracle entries")


def final_epoch(m: TraceModel) -> Optional[int]:
    eps = [a["epoch"] for a in m.activations]
    return max(eps) if eps else None


def check_liveness(trace: Trace, horizon: Optional[int] = None,
                   model: Optional[TraceModel] = None) -> Verdict:
    """Client transactions submitted before ``horizon - slack`` reach every final-epoch replica."""
    m = model or _model(trace)
    name = "liveness"
    h = trace.header
    if h.get("over_threshold"):
        return Verdict(name, NA, "fault budget exceeded; liveness assumption does not hold")
    horizon = horizon if horizon is not None else int(h.get("horizon", 0))
    fe = final_epoch(m)
    if fe is None:
        return _fail(name, "no epoch was ever active")
    if fe not in m.configs:
        return _fail(name, f"epoch {fe} was activated but is not configured",
                     *(a["i"] for a in m.activations if a["epoch"] == fe))
    members = [f"{x.epoch}:{x.index}" for x in m.configs[fe].members]
    correct = [r for r in members if m.correct(r)]
    try:
        full = oracle_outer_log(m.inner, m.certs(), m.genesis_epoch, m.exval)
    except OracleError as exc:
        return _fail(name, f"cannot reconstruct: {exc}")
    logs = {r: {ln.split()[1] for ln in replica_outer(m, r, full)[0]} for r in correct}
    length = max((len(v) for v in logs.values()), default=0)
    slack = h.get("liveness_slack")
    if slack is None:
        lo, hi = h.get("delay", [5, 15])
        slack = int(10 * (lo + hi) / 2 * max(1, length))
    cutoff = horizon - slack
    checked = 0
    for ev in trace.events:
        if ev["ev"] != "client_submit" or ev["t"] > cutoff or not ev.get("resubmit", True):
            continue
        if ev["r"] == "c:0":
            continue
        pl = ev.get("payload", "").encode()
        if not m.exval(Transaction(pl)):
            continue
        checked += 1
        for r in correct:
            if ev["tx"] not in logs[r]:
                return _fail(name, f"tx {ev['tx'][:12]} submitted at t={ev['t']} missing from "
                             f"{r} by horizon {horizon}", ev["i"])
    return _pass(name, f"{checked} submissions before t={cutoff} reached {len(correct)} "
                 f"replicas of epoch {fe}")


# -- protocol invariants -------------------------------------------------------------------


@dataclass
class _Scan:
    """Independent replay of one epoch's inner log: EpochChange / Ready / handover."""

    targets: list[int] = field(default_factory=list)
    preempted: dict[int, int] = field(default_factory=dict)  # target -> position
    handover: Optional[tuple[int, int]] = None  # (target, h)


def scan_epoch(m: TraceModel, e: int, activation_pos: int) -> _Scan:
    cfg = m.configs.get(e)
    out = _Scan()
    pending: Optional[EpochChange] = None
    ec_hash = b""
    counted: set[tuple[int, int]] = set()
    log = m.inner.get(e, {})
    for p in sorted(log):
        if p <= activation_pos or out.handover is not None:
            continue
        c = m.decoded(e, p)
        if isinstance(c, EpochChange):
            if c.from_epoch != e or c.next.epoch <= e:
                continue
            if pending is not None and c.next.epoch <= pending.next.epoch:
                continue
            if pending is not None:
                out.preempted[pending.next.epoch] = p
            pending = c
            ec_hash = hash_bytes(encode_content(c))
            counted = set()
            out.targets.append(c.next.epoch)
        elif isinstance(c, Ready) and pending is not None and cfg is not None:
            if (c.ec_hash != ec_hash or c.from_epoch != e or c.to_epoch != pending.next.epoch
                    or not pending.next.is_member(c.signer) or not c.sig_ok()):
                continue
            counted.add(c.signer.key)
            if len(counted) == pending.next.n:
                out.handover = (pending.next.epoch, p)
    return out


def _activation_positions(m: TraceModel) -> dict[int, int]:
    out = {m.genesis_epoch: 0}
    for a in m.activations:
        out.setdefault(a["epoch"], a["pos"])
    return out


def _done_quorum(m: TraceModel, old: EpochConfig, cert: HandoverCertificate
                 ) -> tuple[Optional[int], int]:
    """Position where the f_old+1-th matching Done commits in the next log, and its count."""
    new = cert.next_config.epoch
    signers: set[tuple[int, int]] = set()
    for p in sorted(m.inner.get(new, {})):
        c = m.decoded(new, p)
        if not isinstance(c, Done) or c.cert != cert:
            continue
        if not old.is_member(c.signer) or not c.sig_ok():
            continue
        signers.add(c.signer.key)
        if len(signers) == old.f + 1:
            return p, len(signers)
    return None, len(signers)


def _unique_certs(m: TraceModel) -> Verdict:
    name = "unique_certificates"
    act = _activation_positions(m)
    for old, evs in sorted(m.cert_events.items()):
        d0 = evs[0]["digest"]
        for ev in evs[1:]:
            if ev["digest"] != d0:
                return _fail(name, f"two certificates end epoch {old}", evs[0]["i"], ev["i"])
        cert = m.cert(old)
        assert cert is not None
        scan = scan_epoch(m, old, act.get(old, 0))
        if scan.handover is None:
            continue
        if scan.handover != (cert.next_config.epoch, cert.h):
            return _fail(name, f"certificate for epoch {old} says ({cert.next_config.epoch}, "
                         f"h={cert.h}), log replay gives {scan.handover}", evs[0]["i"])
    return _pass(name, f"{len(m.cert_events)} certificates")


def _single_active(m: TraceModel) -> Verdict:
    name = "single_active_epoch"
    certs = m.certs()
    succ: dict[int, int] = {}
    for a in m.activations:
        e = a["epoch"]
        if e == m.genesis_epoch:
            continue
        parents = [old for old, c in certs.items() if c.next_config.epoch == e]
        if len(parents) != 1:
            return _fail(name, f"epoch {e} activated without a unique certificate", a["i"])
        old = parents[0]
        if succ.setdefault(old, e) != e:
            return _fail(name, f"epoch {old} has two activated successors", a["i"])
    return _pass(name)


def _no_pre_quorum_shutdown(m: TraceModel) -> Verdict:
    name = "no_pre_quorum_shutdown"
    certs = m.certs()
    for ev in m.halts:
        if ev["ev"] != "halt":
            continue
        old = ev["epoch"]
        cert = certs.get(old)
        cfg = m.configs.get(old)
        if cert is None or cfg is None:
            return _fail(name, f"{ev['r']} halted epoch {old} without a certificate", ev["i"])
        q, count = _done_quorum(m, cfg, cert)
        if q is None:
            return _fail(name, f"{ev['r']} halted with {count} matching Done < f+1 = {cfg.f + 1}",
                         ev["i"])
        qi = m.first_commit.get((cert.next_config.epoch, q))
        if qi is None or qi > ev["i"]:
            return _fail(name, f"{ev['r']} halted before the Done quorum committed", ev["i"], qi)
    return _pass(name)


def _activation_quorum(m: TraceModel) -> Verdict:
    name = "activation_quorum"
    certs = m.certs()
    n = 0
    for a in m.activations:
        e = a["epoch"]
        if e == m.genesis_epoch:
            continue
        parents = [old for old, c in certs.items() if c.next_config.epoch == e]
        if not parents:
            return _fail(name, f"{a['r']} activated epoch {e} without a certificate", a["i"])
        cert = certs[parents[0]]
        old_cfg = m.configs.get(parents[0])
        if old_cfg is None:
            return _fail(name, f"certificate ends unconfigured epoch {parents[0]}", a["i"])
        q, count = _done_quorum(m, old_cfg, cert)
        if q is None:
            return _fail(name, f"{a['r']} activated with {count} matching Done", a["i"])
        if a["pos"] != q:
            return _fail(name, f"{a['r']} activated at position {a['pos']}, quorum at {q}",
                         a["i"])
        own = m.commit_ev.get((a["r"], q))
        if own is None or own > a["i"]:
            return _fail(name, f"{a['r']} activated before committing the quorum Done", a["i"])
        n += 1
    return _pass(name, f"{n} activations at exactly f+1 matching Done")


def _no_post_preemption_activation(m: TraceModel) -> Verdict:
    name = "no_post_preemption_activation"
    act = _activation_positions(m)
    preempted: dict[int, tuple[int, int]] = {}
    for e in sorted(m.inner):
        if e not in act:
            continue
        for tgt, pos in scan_epoch(m, e, act[e]).preempted.items():
            preempted[tgt] = (e, pos)
    for a in m.activations:
        if a["epoch"] in preempted:
            e, pos = preempted[a["epoch"]]
            return _fail(name, f"{a['r']} activated epoch {a['epoch']}, preempted in L_{e} at "
                         f"position {pos}", a["i"], m.inner_ev.get((e, pos)))
    return _pass(name, f"{len(preempted)} preempted targets, none activated")


def _phase_order(m: TraceModel) -> Verdict:
    name = "phase_order"
    for r, evs in m.phases.items():
        cur: dict[str, str] = {}
        for ev in evs:
            role = Role(ev["role"])
            old, new = Phase(ev["old"]), Phase(ev["new"])
            if cur.get(ev["role"], Phase.IDLE.value) != old.value:
                return _fail(name, f"{r}: step from {old.value} but replica was in "
                             f"{cur.get(ev['role'])}", ev["i"])
            if not legal_step(role, old, new):
                return _fail(name, f"{r}: illegal {role.value} step {old.value} -> {new.value}",
                             ev["i"])
            cur[ev["role"]] = new.value
    return _pass(name)


def _trust_chain(m: TraceModel) -> Verdict:
    name = "trust_chain"
    genesis = m.configs.get(m.genesis_epoch)
    if genesis is None:
        return _fail(name, "trace header lacks the genesis configuration")
    certs = m.certs()
    act = {a["epoch"] for a in m.activations}
    links = []
    e = m.genesis_epoch
    while e in certs and certs[e].next_config.epoch in act:
        cert = certs[e]
        new = cert.next_config.epoch
        dones = []
        for p in sorted(m.inner.get(new, {})):
            c = m.decoded(new, p)
            if isinstance(c, Done) and c.cert == cert:
                dones.append(c)
        links.append(ChainLink(cert, tuple(dones)))
        e = new
    v = verify_trust_chain(links, genesis)
    if not v.ok:
        return _fail(name, f"link {v.index}: {v.reason}")
    if links and links[0].cert.prev_cert_hash != genesis_hash(genesis):
        return _fail(name, "first certificate is not anchored at the genesis record")
    return _pass(name, f"{len(links)} links")


def check_protocol_invariants(trace: Trace, model: Optional[TraceModel] = None) -> Verdict:
    m = model or _model(trace)
    subs = (
        _unique_certs(m),
        _single_active(m),
        _no_pre_quorum_shutdown(m),
        _activation_quorum(m),
        _no_post_preemption_activation(m),
        _phase_order(m),
        _trust_chain(m),
    )
    bad = [s for s in subs if not s.ok]
    if bad:
        return Verdict("protocol", FAIL, f"{len(bad)} sub-check(s) failed",
                       tuple(sorted({i for s in bad for i in s.events})), subs)
    return Verdict("protocol", PASS, "", (), subs)


# -- simulation-level checks ----------------------------------------------------------------


def check_fairness(trace: Trace, model: Optional[TraceModel] = None) -> Verdict:
    """Every message to a correct endpoint, due by the end of the run, was delivered."""
    name = "fairness"
    m = model or _model(trace)
    sends = [e for e in trace.events if e["ev"] == "send"]
    if not sends:
        return Verdict(name, NA, "trace has no message events")
    end = trace.footer.get("end_time", max((e["t"] for e in trace.events), default=0))
    delivered = {e["m"] for e in trace.events if e["ev"] == "deliver"}
    for s in sends:
        dst = s["to"]
        if dst.startswith("c:") or m.correct(dst):
            if s["due"] <= end and s["m"] not in delivered and trace.footer.get("error") is None:
                return _fail(name, f"message {s['m']} to {dst} due at {s['due']} never delivered",
                             s["i"])
    return _pass(name, f"{len(sends)} messages")


def check_runtime(trace: Trace) -> Verdict:
    for e in trace.events:
        if e["ev"] == "runtime_violation":
            return _fail("runtime", e.get("error", "violation"), e["i"])
    return _pass("runtime")


def verify_trace(trace: Trace, horizon: Optional[int] = None) -> Report:
    m = TraceModel(trace)
    return Report([
        check_runtime(trace),
        check_safety(trace, m),
        check_oracle(trace, m),
        check_integrity(trace, m),
        check_exval(trace, m),
        check_liveness(trace, horizon, m),
        check_protocol_invariants(trace, m),
        check_fairness(trace, m),
    ])


__all__ = [
    "FAIL", "NA", "PASS", "LEGAL_STEPS", "OracleEntry", "OracleError", "Report", "TraceModel",
    "Verdict", "check_exval", "check_fairness", "check_integrity", "check_liveness",
    "check_oracle", "check_protocol_invariants", "check_runtime", "check_safety",
    "oracle_outer_log", "register_trace_keys", "verify_trace",
]
