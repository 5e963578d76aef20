"""Single-threaded discrete-event scheduler and virtual network."""
from __future__ import annotations

import heapq
import random
from typing import Any, Callable, Optional

Key = tuple[int, int]


class Scheduler:
    """Priority queue on (time, seeded tiebreak, insertion counter)."""

    def __init__(self, seed: int) -> None:
        self.rng = random.Random(seed)
        self.now = 0
        self._q: list[tuple[int, int, int, Callable[..., None], tuple]] = []
        self._seq = 0
        self.steps = 0

    def at(self, time: int, fn: Callable[..., None], *args: Any) -> None:
        if time < self.now:
            raise ValueError(f"cannot schedule in the past ({time} < {self.now})")
        self._seq += 1
        heapq.heappush(self._q, (time, self.rng.getrandbits(30), self._seq, fn, args))

    def after(self, delay: int, fn: Callable[..., None], *args: Any) -> None:
        self.at(self.now + delay, fn, *args)

    def run(self, horizon: int, stop: Optional[Callable[[], bool]] = None) -> None:
        q = self._q
        while q:
            if q[0][0] > horizon:
                break
            t, _, _, fn, args = heapq.heappop(q)
            self.now = t
            self.steps += 1
            fn(*args)
            if stop is not None and stop():
                break

    @property
    def quiescent(self) -> bool:
        return not self._q


class Network:
    """Uniform per-link latency in ``[min_delay, max_delay]`` plus injected extra delay.

    Crashed or silent endpoints drop traffic; every other message is delivered.
    """

    def __init__(self, sched: Scheduler, min_delay: int, max_delay: int,
                 trace_messages: bool = True) -> None:
        self.sched = sched
        self.min_delay = min_delay
        self.max_delay = max_delay
        self.nodes: dict[Key, Any] = {}
        self.dead: set[Key] = set()
        self.link_delay: dict[tuple[Key, Key], int] = {}
        self.kind_delay: dict[tuple[Key, Key, str], int] = {}
        self.src_delay: dict[Key, int] = {}
        self.lane_delay: dict[tuple[int, int], int] = {}
        self.trace_messages = trace_messages
        self.tracer: Optional[Callable[..., int]] = None
        self.sent = 0
        self._mid = 0

    def register(self, key: Key, node: Any) -> None:
        self.nodes[key] = node

    def extra(self, src: Key, dst: Key, msg: Any) -> int:
        d = self.link_delay.get((src, dst), 0) + self.src_delay.get(src, 0)
        if self.kind_delay:
            d += self.kind_delay.get((src, dst, type(msg).__name__), 0)
        lane = getattr(msg, "lane", None)
        if lane is not None and self.lane_delay:
            d += self.lane_delay.get((src[0], lane), 0)
        return d

    def send(self, src: Key, dst: Key, msg: Any) -> None:
        if src in self.dead:
            return
        self.sent += 1
        delay = self.sched.rng.randint(self.min_delay, self.max_delay) + self.extra(src, dst, msg)
        self._mid += 1
        mid = self._mid
        if self.trace_messages and self.tracer is not None:
            self.tracer("send", src, m=mid, to=_name(dst), kind=type(msg).__name__,
                        due=self.sched.now + delay)
        self.sched.after(delay, self._deliver, src, dst, msg, mid)

    def _deliver(self, src: Key, dst: Key, msg: Any, mid: int) -> None:
        if dst in self.dead:
            return
        node = self.nodes.get(dst)
        if node is None:
            return
        if self.trace_messages and self.tracer is not None:
            self.tracer("deliver", dst, m=mid)
        node.deliver(src, msg)


def _name(key: Key) -> str:
    return f"c:{key[1]}" if key[0] == 0 else f"{key[0]}:{key[1]}"
