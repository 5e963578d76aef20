"""Leader-based reference consensus.

A fixed leader per view assigns positions in arrival order.  Members accept
and acknowledge; the leader commits a position once a quorum acknowledged
it.  A member that sees a forwarded request stall for ``vc_timeout`` ticks
moves everyone to the next view, whose leader is the next member in
round-robin order.  The new leader merges the accepted entries of a quorum
(highest view wins per position, holes become no-ops) before serving.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from ..core_model import Content, EpochConfig, Noop, ReplicaId
from .base import ConsensusReplica, Env


@dataclass(frozen=True, slots=True)
class Forward:
    content: Content


@dataclass(frozen=True, slots=True)
class Accept:
    view: int
    pos: int
    content: Content


@dataclass(frozen=True, slots=True)
class Accepted:
    view: int
    pos: int


@dataclass(frozen=True, slots=True)
class Commit:
    pos: int
    content: Content


@dataclass(frozen=True, slots=True)
class StartViewChange:
    view: int


@dataclass(frozen=True, slots=True)
class DoViewChange:
    view: int
    accepted: tuple  # ((pos, view, content), ...)


@dataclass(frozen=True, slots=True)
class StartView:
    view: int
    log: tuple  # ((pos, content), ...)


SEQ_MESSAGES = (Forward, Accept, Accepted, Commit, StartViewChange, DoViewChange, StartView)


class SequencerReplica(ConsensusReplica):
    kind = "sequencer"

    def __init__(self, config: EpochConfig, me: ReplicaId, env: Env,
                 vc_timeout: int = 300) -> None:
        super().__init__(config, me, env)
        self.vc_timeout = vc_timeout
        self.view = 0
        self.normal = True
        self.accepted: dict[int, tuple[int, Content]] = {}
        self.pending: dict[bytes, Content] = {}
        self._future: list[tuple[tuple[int, int], Any]] = []
        # leader state
        self.next_pos = 1
        self.assigned: set[bytes] = set()
        self.acks: dict[int, set[tuple[int, int]]] = {}
        self.done_commit: set[int] = set()
        self.dvc: dict[int, dict[tuple[int, int], tuple]] = {}

    def leader_of(self, view: int) -> tuple[int, int]:
        return self.peers[view % len(self.peers)]

    @property
    def is_leader(self) -> bool:
        return self.leader_of(self.view) == self.me.key

    # -- client side --------------------------------------------------------

    def _propose(self, content: Content) -> None:
        self._track(content)

    def _track(self, content: Content) -> None:
        cid = content.ident
        if cid in self._released_ids or cid in self.pending:
            return
        self.pending[cid] = content
        self._route(content)
        self._arm(cid, self.view)

    def _route(self, content: Content) -> None:
        if not self.normal:
            return
        if self.is_leader:
            self._assign(content)
        else:
            self.env.send(self.leader_of(self.view), Forward(content))

    def _arm(self, cid: bytes, view: int) -> None:
        def fire() -> None:
            if self.halted or cid not in self.pending:
                return
            if self.view != view:
                self._arm(cid, self.view)
                return
            self._start_view_change(self.view + 1)
        self.env.set_timer(self.vc_timeout, fire)

    # -- message handling -------------------------------------------------------

    def _on_message(self, src: tuple[int, int], msg: Any) -> None:
        if isinstance(msg, Forward):
            self._track(msg.content)
        elif isinstance(msg, Accept):
            if msg.view > self.view or (msg.view == self.view and not self.normal):
                self._future.append((src, msg))
            elif msg.view == self.view:
                self.accepted[msg.pos] = (msg.view, msg.content)
                self.env.send(self.leader_of(msg.view), Accepted(msg.view, msg.pos))
        elif isinstance(msg, Accepted):
            self._on_accepted(src, msg)
        elif isinstance(msg, Commit):
            self.pending.pop(msg.content.ident, None)
            self._commit(msg.pos, msg.content)
        elif isinstance(msg, StartViewChange):
            if msg.view > self.view:
                self._start_view_change(msg.view)
        elif isinstance(msg, DoViewChange):
            self._on_dvc(src, msg)
        elif isinstance(msg, StartView):
            self._on_start_view(msg)

    # -- leader ---------------------------------------------------------------

    def _assign(self, content: Content) -> None:
        cid = content.ident
        if cid in self.assigned:
            return
        self.assigned.add(cid)
        pos = self.next_pos
        self.next_pos += 1
        self.accepted[pos] = (self.view, content)
        self.acks[pos] = {self.me.key}
        self.broadcast_others(Accept(self.view, pos, content))
        self._maybe_commit(pos)

    def broadcast_others(self, msg: Any) -> None:
        for p in self.peers:
            if p != self.me.key:
                self.env.send(p, msg)

    def _on_accepted(self, src: tuple[int, int], msg: Accepted) -> None:
        if msg.view != self.view or not self.normal or not self.is_leader:
            return
        acks = self.acks.get(msg.pos)
        if acks is None:
            return
        acks.add(src)
        self._maybe_commit(msg.pos)

    def _maybe_commit(self, pos: int) -> None:
        if pos in self.done_commit or len(self.acks[pos]) < self.config.quorum:
            return
        self.done_commit.add(pos)
        content = self.accepted[pos][1]
        self.broadcast_others(Commit(pos, content))
        self.pending.pop(content.ident, None)
        self._commit(pos, content)

    # -- view change ------------------------------------------------------------

    def _start_view_change(self, view: int) -> None:
        if view <= self.view:
            return
        self.view = view
        self.normal = False
        self.env.trace("view_change", epoch=self.config.epoch, view=view)
        self.broadcast_others(StartViewChange(view))
        acc = tuple((p, v, c) for p, (v, c) in sorted(self.accepted.items()))
        leader = self.leader_of(view)
        if leader == self.me.key:
            self._on_dvc(self.me.key, DoViewChange(view, acc))
        else:
            self.env.send(leader, DoViewChange(view, acc))

        def fire() -> None:
            if not self.halted and self.view == view and not self.normal:
                self._start_view_change(view + 1)
        self.env.set_timer(self.vc_timeout, fire)

    def _on_dvc(self, src: tuple[int, int], msg: DoViewChange) -> None:
        if msg.view < self.view or (msg.view == self.view and self.normal):
            return
        if self.leader_of(msg.view) != self.me.key:
            return
        if msg.view > self.view:
            self._start_view_change(msg.view)
            if self.view != msg.view or self.normal:
                return
        got = self.dvc.setdefault(msg.view, {})
        got[src] = msg.accepted
        if len(got) < self.config.quorum:
            return
        best: dict[int, tuple[int, Content]] = {}
        for acc in got.values():
            for p, v, c in acc:
                if p not in best or v > best[p][0]:
                    best[p] = (v, c)
        top = max(best) if best else 0
        log = []
        for p in range(1, top + 1):
            log.append((p, best[p][1] if p in best else Noop("hole")))
        self.dvc.pop(msg.view, None)
        self._install(msg.view, log)
        self.broadcast_others(StartView(msg.view, tuple(log)))
        self.next_pos = top + 1
        self.assigned = {c.ident for _, c in log if not isinstance(c, Noop)}
        self.acks = {p: {self.me.key} for p, _ in log}
        self.done_commit = set()
        for p, _ in log:
            self._maybe_commit(p)
        for c in list(self.pending.values()):
            self._assign(c)

    def _install(self, view: int, log: list) -> None:
        self.view = view
        self.normal = True
        self.accepted = {p: (view, c) for p, c in log}
        self.env.trace("new_view", epoch=self.config.epoch, view=view, size=len(log))

    def _on_start_view(self, msg: StartView) -> None:
        if msg.view < self.view or (msg.view == self.view and self.normal):
            return
        self._install(msg.view, list(msg.log))
        leader = self.leader_of(msg.view)
        for p, _ in msg.log:
            self.env.send(leader, Accepted(msg.view, p))
        for c in list(self.pending.values()):
            self.env.send(leader, Forward(c))
        future, self._future = self._future, []
        for src, m in future:
            self._on_message(src, m)
