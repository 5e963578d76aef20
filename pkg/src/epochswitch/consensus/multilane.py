"""Multi-proposer reference consensus.

Every member owns a lane.  Slot ``s`` of lane ``l`` (0-based lane index in
member order) maps to global position ``(s - 1) * n + l + 1``.  A slot is
decided once a quorum of members voted for the same value; members vote at
most once per slot, either for the owner's proposal or, after the slot has
been needed for ``noop_timeout`` ticks without a proposal, for a no-op.

Slots commit independently, so positions can be decided internally out of
global order; the base class releases them in order.  A row is "needed" as
soon as any lane puts something into it, and every live owner then fills its
own slot in that row (with a pending transaction or a no-op) so release does
not block on idle lanes.

Liveness of the no-op path assumes ``noop_timeout`` exceeds twice the worst
message delay (including injected lane delays): an owner that proposed
before going silent is then always heard before anyone gives up on it.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any

from ..core_model import Content, EpochConfig, Noop, ReplicaId
from .base import ConsensusReplica, Env

NOOP_KEY = b"\x00noop"


@dataclass(frozen=True, slots=True)
class Propose:
    lane: int
    slot: int
    content: Content


@dataclass(frozen=True, slots=True)
class Vote:
    lane: int
    slot: int
    content: Content


ML_MESSAGES = (Propose, Vote)


def _key(c: Content) -> bytes:
    return NOOP_KEY if isinstance(c, Noop) else c.ident


class MultiLaneReplica(ConsensusReplica):
    kind = "multilane"

    def __init__(self, config: EpochConfig, me: ReplicaId, env: Env,
                 noop_timeout: int = 200) -> None:
        super().__init__(config, me, env)
        self.noop_timeout = noop_timeout
        self.n = len(self.peers)
        self.lane = self.peers.index(me.key)
        self.next_slot = 1
        self.queue: deque[Content] = deque()
        self.queued: set[bytes] = set()
        self.seen: set[bytes] = set()
        self.votes: dict[tuple[int, int], bytes] = {}
        self.tally: dict[tuple[int, int], dict[bytes, set[tuple[int, int]]]] = {}
        self.decided: set[tuple[int, int]] = set()
        self.row_needed = 0

    def position(self, lane: int, slot: int) -> int:
        return (slot - 1) * self.n + lane + 1

    # -- proposing ------------------------------------------------------------

    def _propose(self, content: Content) -> None:
        cid = content.ident
        if cid in self._released_ids or cid in self.queued or cid in self.seen:
            return
        self.queued.add(cid)
        self.queue.append(content)
        self._need(self.next_slot)

    def _fill_own(self, upto: int) -> None:
        while self.next_slot <= upto and not self.halted:
            content: Content = Noop("fill")
            while self.queue:
                c = self.queue.popleft()
                self.queued.discard(c.ident)
                if c.ident not in self.seen and c.ident not in self._released_ids:
                    content = c
                    break
            slot = self.next_slot
            self.next_slot += 1
            self.seen.add(_key(content))
            for p in self.peers:
                if p != self.me.key:
                    self.env.send(p, Propose(self.lane, slot, content))
            self._vote(self.lane, slot, content)

    def _need(self, row: int) -> None:
        if row <= self.row_needed:
            return
        first = self.row_needed + 1
        self.row_needed = row
        for r in range(first, row + 1):
            self._arm(r)
        self._fill_own(row)

    def _arm(self, row: int) -> None:
        def fire() -> None:
            if self.halted:
                return
            for lane in range(self.n):
                if lane != self.lane and (lane, row) not in self.votes:
                    self._vote(lane, row, Noop("silent-lane"))
        self.env.set_timer(self.noop_timeout, fire)

    # -- voting ---------------------------------------------------------------

    def _vote(self, lane: int, slot: int, content: Content) -> None:
        if (lane, slot) in self.votes or (lane, slot) in self.decided:
            return
        self.votes[(lane, slot)] = _key(content)
        msg = Vote(lane, slot, content)
        for p in self.peers:
            if p != self.me.key:
                self.env.send(p, msg)
        self._tally(self.me.key, lane, slot, content)

    def _tally(self, src: tuple[int, int], lane: int, slot: int, content: Content) -> None:
        if (lane, slot) in self.decided:
            return
        k = _key(content)
        voters = self.tally.setdefault((lane, slot), {}).setdefault(k, set())
        voters.add(src)
        if len(voters) >= self.config.quorum:
            self.decided.add((lane, slot))
            self.tally.pop((lane, slot), None)
            self._commit(self.position(lane, slot), content)

    def _on_message(self, src: tuple[int, int], msg: Any) -> None:
        if isinstance(msg, Propose):
            if self.peers[msg.lane] != src:
                return
            self.seen.add(_key(msg.content))
            self._need(msg.slot)
            self._vote(msg.lane, msg.slot, msg.content)
        elif isinstance(msg, Vote):
            self._need(msg.slot)
            if not isinstance(msg.content, Noop):
                self.seen.add(msg.content.ident)
                # owners never equivocate, so any proposal value seen is the owner's
                self._vote(msg.lane, msg.slot, msg.content)
            self._tally(src, msg.lane, msg.slot, msg.content)
