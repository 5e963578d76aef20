"""Reconfiguration state machine: prepare, handover, shutdown.

The engine is pure: it consumes committed inner-log entries in position
order and returns action records.  The hosting replica carries the actions
out (network sends, consensus start/halt, sanitizer updates).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

from .core_model import (
    Done,
    EpochChange,
    EpochConfig,
    HandoverCertificate,
    OuterEntry,
    Ready,
    ReplicaId,
    SigningKey,
    encode_content,
    genesis_hash,
    hash_bytes,
    make_done,
    make_ready,
    validate_epoch_config,
)


class Phase(str, enum.Enum):
    IDLE = "Idle"
    AWAITING_READY = "AwaitingReady"
    HANDOVER_FORMED = "HandoverFormed"
    AWAITING_DONE = "AwaitingDone"
    ACTIVE = "Active"
    SHUT_DOWN = "ShutDown"
    ABORTED = "Aborted"


class Role(str, enum.Enum):
    OUTGOING = "Outgoing"
    INCOMING = "Incoming"


LEGAL_STEPS: dict[Phase, frozenset[Phase]] = {
    Phase.IDLE: frozenset({Phase.AWAITING_READY}),
    Phase.AWAITING_READY: frozenset({Phase.AWAITING_READY, Phase.HANDOVER_FORMED, Phase.ABORTED}),
    Phase.HANDOVER_FORMED: frozenset({Phase.AWAITING_DONE}),
    Phase.AWAITING_DONE: frozenset({Phase.ACTIVE, Phase.SHUT_DOWN}),
    Phase.ACTIVE: frozenset(),
    Phase.SHUT_DOWN: frozenset(),
    Phase.ABORTED: frozenset(),
}


def legal_step(role: Role, a: Phase, b: Phase) -> bool:
    if b not in LEGAL_STEPS[a]:
        return False
    if b == Phase.ACTIVE or b == Phase.ABORTED:
        return role == Role.INCOMING
    if b == Phase.SHUT_DOWN:
        return role == Role.OUTGOING
    return True


# -- actions ------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseChange:
    role: Role
    old: Phase
    new: Phase
    target: int


@dataclass(frozen=True)
class Subscribe:
    """Start streaming this log, from ``position`` on, to the given replicas."""

    members: tuple[ReplicaId, ...]
    position: int


@dataclass(frozen=True)
class BeginPrepare:
    ec: EpochChange
    position: int


@dataclass(frozen=True)
class Abort:
    target: int
    position: int


@dataclass(frozen=True)
class CertFormed:
    cert: HandoverCertificate


@dataclass(frozen=True)
class SubmitDone:
    done: Done


@dataclass(frozen=True)
class Ignored:
    position: int
    reason: str


Action = Union[PhaseChange, Subscribe, BeginPrepare, Abort, CertFormed, SubmitDone, Ignored]


# -- trust chain ----------------------------------------------------------------


@dataclass(frozen=True)
class ChainLink:
    cert: HandoverCertificate
    dones: tuple[Done, ...]

    @property
    def digest(self) -> bytes:
        return self.cert.digest


@dataclass(frozen=True)
class ChainVerdict:
    ok: bool
    index: Optional[int] = None
    reason: str = ""


def verify_trust_chain(links: list[ChainLink], genesis: EpochConfig,
                       anchor: Optional[bytes] = None) -> ChainVerdict:
    """Check hash links and epoch order first, then signer quorums.

    Link indices are 1-based.  ``anchor`` defaults to the genesis record hash.
    """
    prev = genesis_hash(genesis) if anchor is None else anchor
    cfg = genesis
    for i, link in enumerate(links, 1):
        c = link.cert
        if c.prev_cert_hash != prev:
            return ChainVerdict(False, i, "hash mismatch with previous link")
        if c.old_epoch != cfg.epoch:
            return ChainVerdict(False, i, f"certificate ends epoch {c.old_epoch}, expected {cfg.epoch}")
        if c.next_config.epoch <= c.old_epoch:
            return ChainVerdict(False, i, "epochs do not strictly increase")
        prev = c.digest
        cfg = c.next_config
    cfg = genesis
    for i, link in enumerate(links, 1):
        signers = set()
        for d in link.dones:
            if d.cert != link.cert or not cfg.is_member(d.signer) or not d.sig_ok():
                continue
            signers.add(d.signer.key)
        if len(signers) < cfg.f + 1:
            return ChainVerdict(False, i, f"{len(signers)} valid signers < f+1 = {cfg.f + 1}")
        cfg = link.cert.next_config
    return ChainVerdict(True)


def chain_head(links: list[ChainLink], genesis: EpochConfig) -> tuple[bytes, EpochConfig]:
    if not links:
        return genesis_hash(genesis), genesis
    return links[-1].digest, links[-1].cert.next_config


# -- transition over the old epoch's log ------------------------------------------


@dataclass
class TransitionState:
    role: Role
    phase: Phase = Phase.IDLE
    ec: Optional[EpochChange] = None
    ec_hash: bytes = b""
    ec_pos: int = 0
    expected: dict[tuple[int, int], ReplicaId] = field(default_factory=dict)
    ready_signers: list[tuple[int, int]] = field(default_factory=list)
    cert: Optional[HandoverCertificate] = None
    done_signers: list[tuple[int, int]] = field(default_factory=list)
    history: list[tuple[Phase, int]] = field(default_factory=list)

    @property
    def target(self) -> int:
        return self.ec.next.epoch if self.ec else 0


class Transition:
    """Tracks one epoch's inner log for EpochChange / Ready and forms the certificate.

    Outgoing members run it over their own log and submit Done.  Incoming
    replicas run the same logic as read-only learners of the old log, which
    tells them when to prepare, when their target was preempted, and where
    the handover point lies.
    """

    def __init__(self, old: EpochConfig, prev_hash: bytes, role: Role,
                 me: Optional[ReplicaId] = None, key: Optional[SigningKey] = None,
                 active_from: int = 0) -> None:
        self.old = old
        self.prev_hash = prev_hash
        self.me = me
        self.key = key
        self.active_from = active_from
        self.st = TransitionState(role)
        self.st.history.append((Phase.IDLE, 0))

    @property
    def phase(self) -> Phase:
        return self.st.phase

    def _move(self, new: Phase, out: list[Action]) -> None:
        old = self.st.phase
        if not legal_step(self.st.role, old, new):
            raise AssertionError(f"illegal phase step {old} -> {new} for {self.st.role}")
        self.st.phase = new
        self.st.history.append((new, self.st.target))
        out.append(PhaseChange(self.st.role, old, new, self.st.target))

    def _admissible(self, ec: EpochChange) -> Optional[str]:
        if ec.from_epoch != self.old.epoch:
            return f"EpochChange from epoch {ec.from_epoch} committed in epoch {self.old.epoch}"
        if ec.next.epoch <= self.old.epoch:
            return "successor epoch does not increase"
        if self.st.ec is not None and ec.next.epoch <= self.st.ec.next.epoch:
            return "does not supersede the pending epoch change"
        return validate_epoch_config(ec.next)

    def process(self, position: int, content) -> list[Action]:
        if position <= self.active_from:
            return []
        if isinstance(content, EpochChange):
            return self.on_epoch_change(content, position)
        if isinstance(content, Ready):
            return self.on_ready(content, position)
        return []

    def on_epoch_change(self, ec: EpochChange, position: int) -> list[Action]:
        out: list[Action] = []
        if self.st.phase == Phase.AWAITING_READY:
            return self.on_preemption(ec, position)
        if self.st.phase != Phase.IDLE:
            out.append(Ignored(position, f"EpochChange in phase {self.st.phase.value}"))
            return out
        why = self._admissible(ec)
        if why is not None:
            out.append(Ignored(position, f"invalid EpochChange: {why}"))
            return out
        self._install(ec, position)
        self._move(Phase.AWAITING_READY, out)
        self._announce(position, out)
        return out

    def _install(self, ec: EpochChange, position: int) -> None:
        self.st.ec = ec
        self.st.ec_hash = hash_bytes(encode_content(ec))
        self.st.ec_pos = position
        self.st.expected = {m.key: m for m in ec.next.members}
        self.st.ready_signers = []

    def _announce(self, position: int, out: list[Action]) -> None:
        ec = self.st.ec
        assert ec is not None
        if self.st.role == Role.OUTGOING:
            out.append(Subscribe(ec.next.members, position))
        elif self.me is not None and ec.next.is_member(self.me):
            out.append(BeginPrepare(ec, position))

    def on_preemption(self, new_ec: EpochChange, position: int) -> list[Action]:
        out: list[Action] = []
        why = self._admissible(new_ec)
        if why is not None:
            out.append(Ignored(position, f"preemption rejected: {why}"))
            return out
        old_target = self.st.target
        self._install(new_ec, position)
        if (self.st.role == Role.INCOMING and self.me is not None
                and self.me.epoch == old_target):
            self.st.ec = None
            self._move_abort(old_target, out)
            out.append(Abort(old_target, position))
            return out
        self._move(Phase.AWAITING_READY, out)
        self._announce(position, out)
        return out

    def _move_abort(self, old_target: int, out: list[Action]) -> None:
        old = self.st.phase
        self.st.phase = Phase.ABORTED
        self.st.history.append((Phase.ABORTED, old_target))
        out.append(PhaseChange(self.st.role, old, Phase.ABORTED, old_target))

    def on_ready(self, r: Ready, position: int) -> list[Action]:
        out: list[Action] = []
        st = self.st
        if st.phase != Phase.AWAITING_READY:
            out.append(Ignored(position, f"Ready in phase {st.phase.value}"))
            return out
        if r.ec_hash != st.ec_hash or r.from_epoch != self.old.epoch or r.to_epoch != st.target:
            out.append(Ignored(position, "Ready for a different epoch change"))
            return out
        member = st.expected.get(r.signer.key)
        if member is None or member.public_key != r.signer.public_key:
            out.append(Ignored(position, "Ready from a non-member"))
            return out
        if r.signer.key in st.ready_signers:
            out.append(Ignored(position, "duplicate Ready signer"))
            return out
        if not r.sig_ok():
            out.append(Ignored(position, "bad Ready signature"))
            return out
        st.ready_signers.append(r.signer.key)
        if len(st.ready_signers) == len(st.expected):
            out.extend(self.form_handover(position))
        return out

    def form_handover(self, h: int) -> list[Action]:
        out: list[Action] = []
        st = self.st
        assert st.ec is not None
        cert = HandoverCertificate(self.old.epoch, st.ec.next, h, self.prev_hash)
        st.cert = cert
        self._move(Phase.HANDOVER_FORMED, out)
        out.append(CertFormed(cert))
        if st.role == Role.OUTGOING and self.me is not None and self.key is not None:
            out.append(SubmitDone(make_done(cert, self.me, self.key)))
        self._move(Phase.AWAITING_DONE, out)
        return out

    def finish(self) -> list[Action]:
        """Done quorum seen: the incoming side activates, the outgoing side shuts down."""
        out: list[Action] = []
        new = Phase.ACTIVE if self.st.role == Role.INCOMING else Phase.SHUT_DOWN
        self._move(new, out)
        return out


# -- Done counting over the new epoch's log ------------------------------------------


@dataclass(frozen=True)
class DoneQuorum:
    cert: HandoverCertificate
    dones: tuple[Done, ...]
    position: int


class DoneCounter:
    """Counts Done transactions committed in the new epoch's inner log.

    Dones are bucketed by certificate digest; a bucket reaching f_old + 1
    distinct old members decides.  Since at most f_old old members are
    faulty, a conflicting certificate can never reach the quorum.
    """

    def __init__(self, old: EpochConfig, new_epoch: int, prev_hash: bytes) -> None:
        self.old = old
        self.new_epoch = new_epoch
        self.prev_hash = prev_hash
        self.buckets: dict[bytes, list[Done]] = {}
        self.quorum: Optional[DoneQuorum] = None
        self.flags: list[tuple[int, str]] = []

    def on_done(self, d: Done, position: int) -> Optional[DoneQuorum]:
        if self.quorum is not None:
            return None
        c = d.cert
        if c.old_epoch != self.old.epoch or c.next_config.epoch != self.new_epoch:
            self.flags.append((position, "Done for another transition"))
            return None
        if c.prev_cert_hash != self.prev_hash:
            self.flags.append((position, "Done breaks the trust chain"))
            return None
        if not self.old.is_member(d.signer) or not d.sig_ok():
            self.flags.append((position, "Done from non-member or with bad signature"))
            return None
        dig = c.digest
        if any(dd.signer.key == d.signer.key for b in self.buckets.values() for dd in b):
            self.flags.append((position, "second Done from one signer"))
            return None
        if self.buckets and dig not in self.buckets:
            self.flags.append((position, "equivocating Done certificate"))
        bucket = self.buckets.setdefault(dig, [])
        bucket.append(d)
        if len(bucket) >= self.old.f + 1:
            self.quorum = DoneQuorum(c, tuple(bucket), position)
            return self.quorum
        return None


# -- incoming state sync --------------------------------------------------------------


def snapshot_digest(entries: list[OuterEntry], chain: list[ChainLink]) -> bytes:
    h = hash_bytes(b"".join(e.export_line().encode() + b"\n" for e in entries))
    return hash_bytes(h + b"".join(link.digest for link in chain))


class IncomingSync:
    """Fetch the outer-log prefix and trust chain from the old epoch.

    Byzantine epochs need f+1 matching copies from distinct old members;
    crash epochs accept any single copy.  On a mismatch or a missing answer
    one more member is asked; when nobody is left the round restarts.
    """

    def __init__(self, old: EpochConfig, position: int, start: int = 0) -> None:
        self.old = old
        self.position = position
        order = [m.key for m in old.members]
        self.order = order[start % len(order):] + order[:start % len(order)]
        self.asked: list[tuple[int, int]] = []
        self.answers: dict[tuple[int, int], bytes] = {}
        self.copies: dict[bytes, tuple[list[OuterEntry], list[ChainLink]]] = {}
        self.result: Optional[tuple[list[OuterEntry], list[ChainLink]]] = None
        self.rounds = 0

    @property
    def need(self) -> int:
        return self.old.learn_threshold

    def next_targets(self) -> list[tuple[int, int]]:
        """Members to ask now to still be able to reach the threshold."""
        if self.result is not None:
            return []
        best = max((list(self.answers.values()).count(d) for d in set(self.answers.values())),
                   default=0)
        outstanding = len(self.asked) - len(self.answers)
        want = self.need - best - outstanding
        if want <= 0:
            return []
        fresh = [m for m in self.order if m not in self.asked]
        if not fresh:
            return []
        picked = fresh[:want]
        self.asked.extend(picked)
        return picked

    def give_up_round(self) -> list[tuple[int, int]]:
        """Nothing settled after a timeout: ask one more member, or restart the round."""
        if self.result is not None:
            return []
        fresh = [m for m in self.order if m not in self.asked]
        if fresh:
            self.asked.append(fresh[0])
            return [fresh[0]]
        self.rounds += 1
        self.asked = [m for m in self.asked if m in self.answers]
        return self.next_targets()

    def on_response(self, src: tuple[int, int], entries: list[OuterEntry],
                    chain: list[ChainLink]) -> bool:
        if self.result is not None or src in self.answers or src not in self.asked:
            return False
        dig = snapshot_digest(entries, chain)
        self.answers[src] = dig
        self.copies.setdefault(dig, (entries, chain))
        if sum(1 for d in self.answers.values() if d == dig) >= self.need:
            self.result = self.copies[dig]
            return True
        return False

    def mismatch(self) -> bool:
        return len(set(self.answers.values())) > 1


def build_ready(ec: EpochChange, me: ReplicaId, key: SigningKey) -> Ready:
    return make_ready(ec.from_epoch, ec.next.epoch, hash_bytes(encode_content(ec)), me, key)
