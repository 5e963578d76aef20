"""A simulated RSM replica: consensus + reconfiguration engine + sanitizer.

Each replica belongs to exactly one epoch (fresh identities per epoch).  It
learns the old epoch's log, and later the next epoch's log, as a read-only
learner: members push released entries, and an entry is accepted once
``learn_threshold`` distinct members pushed identical content.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Any, Optional

from ..consensus.base import ConsensusReplica
from ..consensus.multilane import MultiLaneReplica
from ..consensus.sequencer import SequencerReplica
from ..core_model import (
    ConsensusKind,
    Content,
    Done,
    EpochChange,
    EpochConfig,
    HandoverCertificate,
    InnerLogEntry,
    OuterEntry,
    Ready,
    ReplicaId,
    SigningKey,
    Transaction,
    encode_content,
    genesis_hash,
    hash_bytes,
    make_done,
)
from ..engine import (
    Abort,
    BeginPrepare,
    CertFormed,
    ChainLink,
    DoneCounter,
    DoneQuorum,
    Ignored,
    IncomingSync,
    Phase,
    PhaseChange,
    Role,
    SubmitDone,
    Subscribe,
    Transition,
    build_ready,
    chain_head,
    verify_trust_chain,
)
from ..sanitizer import EXVAL_PREDICATES, Sanitizer, export_outer_log

if TYPE_CHECKING:
    from .harness import Simulation

Key = tuple[int, int]


# -- wire messages between replicas / clients ----------------------------------


@dataclass(frozen=True, slots=True)
class Submit:
    content: Content
    client: Optional[Key] = None


@dataclass(frozen=True, slots=True)
class Executed:
    txid: bytes


@dataclass(frozen=True, slots=True)
class Rejected:
    txid: bytes
    reason: str


@dataclass(frozen=True, slots=True)
class Push:
    epoch: int
    pos: int
    content: Content


@dataclass(frozen=True, slots=True)
class Announce:
    epoch: int
    pos: int
    chain: tuple


@dataclass(frozen=True, slots=True)
class SyncRequest:
    epoch: int
    pos: int


@dataclass(frozen=True, slots=True)
class SyncResponse:
    epoch: int
    pos: int
    entries: tuple
    chain: tuple


class LearnerFeed:
    """Accepts another epoch's log entries once enough members agree on them."""

    def __init__(self, config: EpochConfig, start: int) -> None:
        self.config = config
        self.next_pos = start
        self.members = {m.key for m in config.members}
        self.votes: dict[int, dict[bytes, set[Key]]] = {}
        self.contents: dict[bytes, Content] = {}
        self.accepted: dict[int, Content] = {}

    def on_push(self, src: Key, pos: int, content: Content) -> list[InnerLogEntry]:
        if src not in self.members or pos < self.next_pos:
            return []
        raw = encode_content(content)
        self.contents.setdefault(raw, content)
        self.votes.setdefault(pos, {}).setdefault(raw, set()).add(src)
        out = []
        need = self.config.learn_threshold
        while True:
            slot = self.votes.get(self.next_pos)
            if not slot:
                break
            winner = next((r for r, s in slot.items() if len(s) >= need), None)
            if winner is None:
                break
            del self.votes[self.next_pos]
            c = self.contents[winner]
            self.accepted[self.next_pos] = c
            out.append(InnerLogEntry(self.config.epoch, self.next_pos, c))
            self.next_pos += 1
        return out

    def has(self, ident: bytes) -> bool:
        return any(getattr(c, "ident", None) == ident for c in self.accepted.values())


class Replica:
    def __init__(self, sim: "Simulation", config: EpochConfig, me: ReplicaId, key: SigningKey,
                 genesis: EpochConfig, exval: str) -> None:
        self.sim = sim
        self.config = config
        self.me = me
        self.key = key
        self.genesis = genesis
        self.name = f"{me.epoch}:{me.index}"
        self.exval_name = exval
        self.exval = EXVAL_PREDICATES[exval]
        self.fault: Optional[str] = None
        self.crashed = False

        self.consensus: Optional[ConsensusReplica] = None
        self.own_log: list[InnerLogEntry] = []
        self.active = False
        self.activation_pos: Optional[int] = None
        self.own_tracker: Optional[Transition] = None
        self.processed = 0  # own-log prefix handed to tracker and sanitizer

        self.chain: list[ChainLink] = []
        self.outer: list[OuterEntry] = []
        self.sanitizer: Optional[Sanitizer] = None
        self.kv: dict[str, str] = {}
        self.snapshots: dict[int, int] = {}
        self.sync_waiting: list[tuple[Key, SyncRequest]] = []

        # incoming side: learning the old epoch
        self.old_config: Optional[EpochConfig] = None
        self.prev_hash: bytes = b""
        self.old_feed: Optional[LearnerFeed] = None
        self.in_tracker: Optional[Transition] = None
        self.sync: Optional[IncomingSync] = None
        self.synced = False
        self.sync_buffer: list[InnerLogEntry] = []
        self.in_done: Optional[DoneCounter] = None
        self.done_quorum: Optional[DoneQuorum] = None
        self.in_cert: Optional[HandoverCertificate] = None
        self.ec_seen: Optional[tuple[EpochChange, int]] = None
        self.push_prev = False

        # outgoing side: learning the next epoch
        self.subscribers: dict[Key, int] = {}
        self.next_feed: Optional[LearnerFeed] = None
        self.out_done: Optional[DoneCounter] = None
        self.early_pushes: list[tuple[Key, Push]] = []

        self.client_pending: dict[bytes, Key] = {}
        self.early_submits: list[Content] = []

    # -- plumbing -------------------------------------------------------------------

    def now(self) -> int:
        return self.sim.sched.now

    def send(self, dst: Key, msg: Any) -> None:
        self.sim.net.send(self.me.key, dst, msg)

    def set_timer(self, delay: int, fn) -> None:
        def fire() -> None:
            if not self.crashed:
                fn()
        self.sim.sched.after(delay, fire)

    def trace(self, ev: str, **fields: Any) -> int:
        return self.sim.trace.record(self.sim.sched.now, ev, self.name, **fields)

    def on_decided(self) -> None:
        self.sim.sched.after(0, self._drain)

    @property
    def phase(self) -> Phase:
        t = self.own_tracker if self.own_tracker is not None else self.in_tracker
        return t.phase if t is not None else Phase.IDLE

    # -- lifecycle -------------------------------------------------------------------

    def start_genesis(self) -> None:
        self.old_config = None
        self.sanitizer = Sanitizer(self.config.epoch, self.exval)
        self.synced = True
        self.active = True
        self.activation_pos = 0
        self.own_tracker = Transition(self.config, genesis_hash(self.genesis), Role.OUTGOING,
                                      self.me, self.key, active_from=0)
        self._start_consensus()
        self.trace("activate", epoch=self.config.epoch, pos=0)
        self.sim.on_activated(self)

    def _start_consensus(self) -> None:
        if self.consensus is not None:
            return
        p = self.sim.scenario.params
        if self.config.consensus_kind == ConsensusKind.SEQUENCER:
            self.consensus = SequencerReplica(self.config, self.me, self, vc_timeout=p.vc_timeout)
        else:
            self.consensus = MultiLaneReplica(self.config, self.me, self,
                                              noop_timeout=p.noop_timeout)
        self.trace("consensus_start", epoch=self.config.epoch, kind=self.consensus.kind)
        early, self.early_submits = self.early_submits, []
        for c in early:
            self.consensus.propose(c)

    def crash(self, kind: str) -> None:
        self.fault = kind
        if kind in ("crash", "silent"):
            self.crashed = True
            self.sim.net.dead.add(self.me.key)

    # -- inbound ---------------------------------------------------------------------

    def deliver(self, src: Key, msg: Any) -> None:
        if self.crashed:
            return
        if isinstance(msg, Push):
            self._on_push(src, msg)
        elif isinstance(msg, Submit):
            self._on_submit(src, msg)
        elif isinstance(msg, Announce):
            self._on_announce(src, msg)
        elif isinstance(msg, SyncRequest):
            self._on_sync_request(src, msg)
        elif isinstance(msg, SyncResponse):
            self._on_sync_response(src, msg)
        elif self.consensus is not None and src[0] == self.config.epoch:
            self.consensus.on_message(src, msg)

    def _on_submit(self, src: Key, msg: Submit) -> None:
        c = msg.content
        if isinstance(c, Transaction) and msg.client is not None:
            if self.active and self.sanitizer is not None and c.id in self.sanitizer.seen_ids:
                self.send(msg.client, Executed(c.id))
                return
            self.client_pending[c.id] = msg.client
        if self.consensus is None and msg.client is None:
            # system tx racing ahead of our own prepare step
            self.early_submits.append(c)
            return
        if self.consensus is None or not self.consensus.propose(c):
            if isinstance(c, Transaction) and msg.client is not None:
                self.client_pending.pop(c.id, None)
                self.send(msg.client, Rejected(c.id, "halted" if self.consensus else "inactive"))

    # -- own consensus output ----------------------------------------------------------

    def _drain(self) -> None:
        if self.crashed or self.consensus is None:
            return
        while True:
            e = self.consensus.poll_decided()
            if e is None:
                break
            self.own_log.append(e)
            self.trace("commit", epoch=e.epoch, pos=e.position,
                       content=encode_content(e.content).hex())
            self._push_out(e)
            if self.in_done is not None and self.done_quorum is None and isinstance(e.content, Done):
                q = self.in_done.on_done(e.content, e.position)
                for pos, why in self.in_done.flags:
                    self.trace("done_flag", epoch=e.epoch, pos=pos, reason=why)
                self.in_done.flags.clear()
                if q is not None:
                    self.done_quorum = q
                    self.trace("done_quorum", epoch=e.epoch, pos=q.position,
                               cert=q.cert.digest.hex())
                    self._try_activate()
        if self.active:
            self._process_own()

    def _push_out(self, e: InnerLogEntry) -> None:
        msg = Push(e.epoch, e.position, e.content)
        for dst, start in self.subscribers.items():
            if e.position >= start:
                self.send(dst, msg)
        if self.push_prev and self.old_config is not None:
            for m in self.old_config.members:
                self.send(m.key, msg)

    def _process_own(self) -> None:
        assert self.own_tracker is not None and self.sanitizer is not None
        while self.processed < len(self.own_log):
            e = self.own_log[self.processed]
            self.processed += 1
            self._sanitize(e)
            if isinstance(e.content, EpochChange):
                self.snapshots[e.position] = len(self.outer)
            self._run_actions(self.own_tracker.process(e.position, e.content), e.position)
            if self.sync_waiting:
                self._answer_waiting()

    def _sanitize(self, e: InnerLogEntry) -> None:
        assert self.sanitizer is not None
        before = self.sanitizer.current_epoch
        emitted = self.sanitizer.ingest(e)
        if self.sanitizer.current_epoch != before:
            self.trace("epoch_marker", epoch=self.sanitizer.current_epoch,
                       outer_next=self.sanitizer.outer_next)
        for o in emitted:
            self.outer.append(o)
            self._execute(o.tx)
            self.trace("emit", op=o.outer_position, tx=o.tx.id.hex(), se=o.source[0],
                       sp=o.source[1])
            client = self.client_pending.pop(o.tx.id, None)
            if client is not None:
                self.send(client, Executed(o.tx.id))

    def _execute(self, tx: Transaction) -> None:
        parts = tx.payload.split(b" ")
        if len(parts) == 3 and parts[0] == b"set":
            self.kv[parts[1].decode(errors="replace")] = parts[2].decode(errors="replace")

    # -- engine actions -----------------------------------------------------------------

    def _run_actions(self, actions: list, position: int) -> None:
        # the tracker has already moved through every phase in the batch; trace them
        # before side effects that may re-enter and trace later steps
        for a in actions:
            if isinstance(a, PhaseChange):
                self.trace("phase", role=a.role.value, old=a.old.value, new=a.new.value,
                           target=a.target, pos=position)
            elif isinstance(a, Ignored):
                self.trace("ignored", pos=a.position, reason=a.reason)
        for a in actions:
            if isinstance(a, Subscribe):
                self._subscribe(a)
            elif isinstance(a, CertFormed):
                self._on_cert(a.cert)
            elif isinstance(a, SubmitDone):
                self._submit_done(a.done)
            elif isinstance(a, BeginPrepare):
                self._begin_prepare(a.ec, a.position)
            elif isinstance(a, Abort):
                self._abort(a)

    def _subscribe(self, a: Subscribe) -> None:
        chain = tuple(self.chain)
        for m in a.members:
            self.subscribers[m.key] = a.position
            self.send(m.key, Announce(self.config.epoch, a.position, chain))
            for e in self.own_log[a.position - 1:]:
                self.send(m.key, Push(e.epoch, e.position, e.content))

    def _on_cert(self, cert: HandoverCertificate) -> None:
        self.trace("cert", role="out" if self.own_tracker and self.active else "in",
                   old=cert.old_epoch, new=cert.next_config.epoch, h=cert.h,
                   digest=cert.digest.hex(), cert=cert.encode().hex())
        if self.active:
            assert self.sanitizer is not None
            self.sanitizer.apply_handover(cert)
            self.next_feed = LearnerFeed(cert.next_config, 1)
            self.out_done = DoneCounter(self.config, cert.next_config.epoch, cert.prev_cert_hash)
            early, self.early_pushes = self.early_pushes, []
            for src, p in early:
                self._on_push(src, p)
        else:
            self.in_cert = cert
            if self.synced:
                assert self.sanitizer is not None
                self.sanitizer.apply_handover(cert)
            self._try_activate()

    def _submit_done(self, done: Done) -> None:
        if self.fault == "equivocate_done":
            forged = replace(done.cert, h=done.cert.h + 1)
            done = make_done(forged, self.me, self.key)
            self.trace("equivocate", cert=forged.digest.hex())
        self.trace("submit_done", cert=done.cert.digest.hex())
        self._submit_system(done, done.cert.next_config)

    def _submit_system(self, content: Content, target: EpochConfig) -> None:
        """Send a system transaction to f+1 members of ``target``, so one correct member has it."""
        members = [m.key for m in target.members]
        start = self.me.index % len(members)
        order = members[start:] + members[:start]
        for dst in order[:target.f + 1]:
            self.send(dst, Submit(content))

    # -- learner side ---------------------------------------------------------------------

    def _on_announce(self, src: Key, msg: Announce) -> None:
        if self.old_config is not None or self.active:
            return
        chain = list(msg.chain)
        if not verify_trust_chain(chain, self.genesis).ok:
            self.trace("announce_rejected", src=f"{src[0]}:{src[1]}")
            return
        head, cfg = chain_head(chain, self.genesis)
        if cfg.epoch != msg.epoch or src not in {m.key for m in cfg.members}:
            return
        self.old_config = cfg
        self.prev_hash = head
        self.old_feed = LearnerFeed(cfg, msg.pos)
        self.in_tracker = Transition(cfg, head, Role.INCOMING, self.me, self.key,
                                     active_from=msg.pos - 1)
        early, self.early_pushes = self.early_pushes, []
        for s, p in early:
            self._on_push(s, p)

    def _on_push(self, src: Key, msg: Push) -> None:
        if self.old_feed is not None and msg.epoch == self.old_feed.config.epoch:
            for e in self.old_feed.on_push(src, msg.pos, msg.content):
                self._on_learned_old(e)
        elif self.next_feed is not None and msg.epoch == self.next_feed.config.epoch:
            for e in self.next_feed.on_push(src, msg.pos, msg.content):
                self._on_learned_next(e)
        elif msg.epoch != self.config.epoch:
            self.early_pushes.append((src, msg))

    def _on_learned_old(self, e: InnerLogEntry) -> None:
        self.trace("learn", epoch=e.epoch, pos=e.position)
        assert self.in_tracker is not None
        if self.active or self.in_tracker.phase == Phase.ABORTED:
            return
        if self.synced and self.sanitizer is not None and not self.active:
            self._sanitize(e)
        else:
            self.sync_buffer.append(e)
        self._run_actions(self.in_tracker.process(e.position, e.content), e.position)
        self._try_activate()

    def _begin_prepare(self, ec: EpochChange, position: int) -> None:
        assert self.old_config is not None
        self.ec_seen = (ec, position)
        self._start_consensus()
        self.in_done = DoneCounter(self.old_config, self.config.epoch, self.prev_hash)
        self.push_prev = True
        for e in self.own_log:
            self._push_out_prev(e)
        self.sync = IncomingSync(self.old_config, position, start=self.me.index)
        self.trace("sync_start", epoch=self.old_config.epoch, pos=position)
        self._sync_ask(self.sync.next_targets())

    def _push_out_prev(self, e: InnerLogEntry) -> None:
        assert self.old_config is not None
        for m in self.old_config.members:
            self.send(m.key, Push(e.epoch, e.position, e.content))

    def _sync_ask(self, targets: list[Key]) -> None:
        assert self.sync is not None
        sync = self.sync
        for t in targets:
            self.send(t, SyncRequest(sync.old.epoch, sync.position))
        if targets:
            def fire() -> None:
                if not self.synced and self.sync is sync:
                    self._sync_ask(sync.give_up_round())
            self.set_timer(self.sim.scenario.params.sync_timeout, fire)

    def _on_sync_request(self, src: Key, msg: SyncRequest) -> None:
        if msg.epoch != self.config.epoch:
            return
        self.sync_waiting.append((src, msg))
        self._answer_waiting()

    def _answer_waiting(self) -> None:
        keep = []
        for src, msg in self.sync_waiting:
            n = self.snapshots.get(msg.pos)
            if n is None:
                keep.append((src, msg))
                continue
            entries = tuple(self.outer[:n])
            if self.fault == "tamper_sync" and entries:
                last = entries[-1]
                forged = OuterEntry(last.outer_position, Transaction(b"tampered " + last.tx.payload),
                                    last.source)
                entries = entries[:-1] + (forged,)
            self.send(src, SyncResponse(msg.epoch, msg.pos, entries, tuple(self.chain)))
        self.sync_waiting = keep

    def _on_sync_response(self, src: Key, msg: SyncResponse) -> None:
        sync = self.sync
        if sync is None or self.synced or msg.pos != sync.position:
            return
        done = sync.on_response(src, list(msg.entries), list(msg.chain))
        if sync.mismatch() and not done:
            self.trace("sync_mismatch", src=f"{src[0]}:{src[1]}")
            self._sync_ask(sync.next_targets())
            return
        if not done:
            self._sync_ask(sync.next_targets())
            return
        entries, chain = sync.result
        head, cfg = chain_head(chain, self.genesis)
        if not verify_trust_chain(chain, self.genesis).ok or head != self.prev_hash:
            self.trace("sync_bad_chain")
            return
        self.synced = True
        self.chain = list(chain)
        self.outer = list(entries)
        self.sanitizer = Sanitizer.from_snapshot(sync.old.epoch, sync.position, self.outer,
                                                 self.exval)
        for o in self.outer:
            self._execute(o.tx)
        self.trace("sync_done", epoch=sync.old.epoch, pos=sync.position, outer_len=len(self.outer),
                   digest=hash_bytes(export_outer_log(self.outer).encode()).hex(),
                   copies=len(sync.answers))
        if self.in_cert is not None:
            self.sanitizer.apply_handover(self.in_cert)
        buf, self.sync_buffer = self.sync_buffer, []
        for e in buf:
            if e.position > sync.position:
                self._sanitize(e)
        assert self.ec_seen is not None
        if self.in_tracker is not None and self.in_tracker.phase != Phase.ABORTED:
            ready = build_ready(self.ec_seen[0], self.me, self.key)
            self.trace("submit_ready", epoch=sync.old.epoch, to=self.config.epoch)
            self._submit_system(ready, self.old_config)
        self._try_activate()

    def _abort(self, a: Abort) -> None:
        self.trace("abort", target=a.target, pos=a.position)
        if self.consensus is not None:
            self.consensus.halt()
        self.push_prev = False

    def _try_activate(self) -> None:
        if self.active or self.done_quorum is None or self.in_tracker is None:
            return
        if self.in_tracker.phase != Phase.AWAITING_DONE or self.in_cert is None:
            return
        if self.sanitizer is None or not self.sanitizer.prefix_consumed:
            return
        q = self.done_quorum
        if q.cert != self.in_cert:
            self.trace("cert_mismatch", quorum=q.cert.digest.hex(), own=self.in_cert.digest.hex())
            return
        self._run_actions(self.in_tracker.finish(), q.position)
        self.chain.append(ChainLink(q.cert, q.dones))
        self.active = True
        self.activation_pos = q.position
        self.push_prev = False
        self.own_tracker = Transition(self.config, q.cert.digest, Role.OUTGOING, self.me, self.key,
                                      active_from=q.position)
        self.trace("activate", epoch=self.config.epoch, pos=q.position)
        self.sim.on_activated(self)
        self._process_own()

    def _on_learned_next(self, e: InnerLogEntry) -> None:
        self.trace("learn", epoch=e.epoch, pos=e.position)
        if self.out_done is None or not isinstance(e.content, Done):
            return
        q = self.out_done.on_done(e.content, e.position)
        if q is None:
            return
        assert self.own_tracker is not None
        self.trace("done_quorum", epoch=e.epoch, pos=q.position, cert=q.cert.digest.hex())
        if self.own_tracker.phase != Phase.AWAITING_DONE or q.cert != self.own_tracker.st.cert:
            self.trace("cert_mismatch", quorum=q.cert.digest.hex())
            return
        self._run_actions(self.own_tracker.finish(), e.position)
        assert self.consensus is not None
        self.consensus.halt()
        self.trace("halt", epoch=self.config.epoch, next=e.epoch, quorum_pos=q.position)

    # -- summary for the trace footer ----------------------------------------------------

    def summary(self) -> dict[str, Any]:
        san = self.sanitizer
        hist = []
        for t, role in ((self.in_tracker, "in"), (self.own_tracker, "out")):
            if t is not None:
                hist.append([role, [[p.value, tg] for p, tg in t.st.history]])
        return {
            "replica": self.name,
            "fault": self.fault,
            "exval": self.exval_name,
            "active": self.active,
            "activation_pos": self.activation_pos,
            "synced": self.synced,
            "sanitizer": None if san is None else {
                "epoch": san.current_epoch, "last_pos": san.last_pos, "cutoff": san.emit_cutoff},
            "own_released": len(self.own_log),
            "phases": hist,
            "chain": [link.digest.hex() for link in self.chain],
            "outer": [[o.outer_position, o.tx.id.hex(), o.source[0], o.source[1]]
                      for o in self.outer],
        }
