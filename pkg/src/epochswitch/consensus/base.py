"""The consensus interface the reconfiguration engine depends on."""
from __future__ import annotations

from collections import deque
from typing import Any, Callable, Optional, Protocol

from ..core_model import Content, EpochConfig, InnerLogEntry, Noop, ReplicaId


class Env(Protocol):
    """What a consensus replica may use from its host.  Supplied by the simulator."""

    def now(self) -> int: ...

    def send(self, dst: tuple[int, int], msg: Any) -> None: ...

    def set_timer(self, delay: int, fn: Callable[[], None]) -> None: ...

    def trace(self, ev: str, **fields: Any) -> None: ...

    def on_decided(self) -> None: ...


class Halted(Exception):
    """Raised by strict callers; ``propose`` itself reports halting by returning False."""


class ConsensusReplica:
    """One member's endpoint of a consensus instance.

    Subclasses call ``_commit(pos, content)`` when a position becomes decided
    internally, in any order.  This base class buffers such commits and
    releases them to ``poll_decided`` strictly in position order.  A content
    that was already released at a lower position is released as a no-op,
    so each transaction is decided at most once per inner log.
    """

    kind = "abstract"

    def __init__(self, config: EpochConfig, me: ReplicaId, env: Env) -> None:
        self.config = config
        self.me = me
        self.env = env
        self.halted = False
        self.peers = [m.key for m in config.members]
        self._committed: dict[int, Content] = {}
        self._next_release = 1
        self._released_ids: set[bytes] = set()
        self._ready: deque[InnerLogEntry] = deque()

    # -- interface --------------------------------------------------------

    def propose(self, content: Content) -> bool:
        if self.halted:
            return False
        self._propose(content)
        return True

    def poll_decided(self) -> Optional[InnerLogEntry]:
        if self._ready:
            return self._ready.popleft()
        return None

    def halt(self) -> None:
        if not self.halted:
            self.halted = True
            self.env.trace("consensus_halt", epoch=self.config.epoch)

    def on_message(self, src: tuple[int, int], msg: Any) -> None:
        if not self.halted:
            self._on_message(src, msg)

    @property
    def released(self) -> int:
        """Highest position handed to the local consumer so far."""
        return self._next_release - 1

    # -- hooks ------------------------------------------------------------

    def _propose(self, content: Content) -> None:
        raise NotImplementedError

    def _on_message(self, src: tuple[int, int], msg: Any) -> None:
        raise NotImplementedError

    # -- shared machinery ---------------------------------------------------

    def broadcast(self, msg: Any) -> None:
        for p in self.peers:
            self.env.send(p, msg)

    def _commit(self, pos: int, content: Content) -> None:
        prev = self._committed.get(pos)
        if prev is not None:
            if prev != content:
                raise AssertionError(f"conflicting commit at {self.config.epoch}:{pos}")
            return
        if pos < self._next_release:
            return
        self._committed[pos] = content
        self.env.trace("internal_commit", epoch=self.config.epoch, pos=pos)
        released = False
        while self._next_release in self._committed:
            p = self._next_release
            c = self._committed.pop(p)
            if not isinstance(c, Noop):
                cid = c.ident
                if cid in self._released_ids:
                    c = Noop("duplicate")
                else:
                    self._released_ids.add(cid)
            self._ready.append(InnerLogEntry(self.config.epoch, p, c))
            self._next_release += 1
            released = True
        if released:
            self.env.on_decided()

    def is_committed(self, pos: int) -> bool:
        return pos < self._next_release or pos in self._committed
