"""Scenario execution: replicas, clients, operator and fault injection."""
from __future__ import annotations

import traceback
from typing import Any, Optional

from ..core_model import EpochChange, EpochConfig, Transaction
from .replica import Executed, Rejected, Replica, Submit
from .scenario import FAULT_KINDS, Event, Scenario, parse_replica
from .scheduler import Network, Scheduler
from .trace import Trace, rname

Key = tuple[int, int]
OPERATOR: Key = (0, 0)


class Client:
    """Submits transactions and resubmits any not yet observed as executed."""

    def __init__(self, sim: "Simulation", index: int) -> None:
        self.sim = sim
        self.key: Key = (0, index)
        self.name = rname(self.key)
        self.pending: dict[bytes, tuple[Transaction, bool, int]] = {}
        self.done: set[bytes] = set()
        self.turn = index
        self.last_turn: dict[bytes, int] = {}

    def submit(self, payload: bytes, target: Optional[Key] = None, resubmit: bool = True) -> None:
        tx = Transaction(payload)
        self.sim.trace.record(self.sim.sched.now, "client_submit", self.name, tx=tx.id.hex(),
                              payload=payload.decode(errors="replace"), resubmit=resubmit)
        if tx.id in self.done:
            return
        self.pending[tx.id] = (tx, resubmit, 0)
        self._send(tx, target)

    def _send(self, tx: Transaction, target: Optional[Key] = None) -> None:
        if target is None:
            # a retry moves on from the member tried last, so a dead member is not hit twice
            last = self.last_turn.get(tx.id)
            turn = self.turn if last is None else last + 1
            target = self.sim.pick_member(turn)
            self.last_turn[tx.id] = turn
            self.turn += 1
        self.sim.net.send(self.key, target, Submit(tx, self.key))
        entry = self.pending.get(tx.id)
        if entry is None:
            return
        gen = entry[2] + 1
        self.pending[tx.id] = (tx, entry[1], gen)
        if entry[1]:
            self.sim.sched.after(self.sim.scenario.params.resubmit_timeout, self._timeout, tx.id, gen)

    def _timeout(self, txid: bytes, gen: int) -> None:
        entry = self.pending.get(txid)
        if entry is None or entry[2] != gen:
            return
        self.sim.trace.record(self.sim.sched.now, "client_resubmit", self.name, tx=txid.hex())
        self._send(entry[0])

    def deliver(self, src: Key, msg: Any) -> None:
        if isinstance(msg, Executed):
            if msg.txid in self.pending:
                del self.pending[msg.txid]
                self.last_turn.pop(msg.txid, None)
                self.done.add(msg.txid)
                self.sim.trace.record(self.sim.sched.now, "client_executed", self.name,
                                      tx=msg.txid.hex(), by=rname(src))
        elif isinstance(msg, Rejected):
            entry = self.pending.get(msg.txid)
            if entry is not None and entry[1]:
                self.sim.sched.after(1, self._retry, msg.txid, entry[2])

    def _retry(self, txid: bytes, gen: int) -> None:
        entry = self.pending.get(txid)
        if entry is not None and entry[2] == gen:
            self._send(entry[0])


class Simulation:
    def __init__(self, scenario: Scenario, trace_messages: bool = True) -> None:
        scenario.validate()
        self.scenario = scenario
        self.sched = Scheduler(scenario.seed)
        self.net = Network(self.sched, scenario.min_delay, scenario.max_delay, trace_messages)
        self.trace = Trace()
        self.net.tracer = lambda ev, key, **f: self.trace.record(self.sched.now, ev, rname(key), **f)
        self.configs: dict[int, EpochConfig] = scenario.configs()
        self.genesis = self.configs[scenario.epochs[0].epoch]
        self.active_epoch = self.genesis.epoch
        self.activated: dict[int, int] = {}
        self.replicas: dict[Key, Replica] = {}
        overrides = {parse_replica(k): v for k, v in scenario.exval_overrides}
        for e, cfg in self.configs.items():
            for m in cfg.members:
                r = Replica(self, cfg, m, scenario.signing_key(m.key), self.genesis,
                            overrides.get(m.key, scenario.exval))
                self.replicas[m.key] = r
                self.net.register(m.key, r)
        self.clients: dict[int, Client] = {}
        self.operator = Client(self, 0)
        self.net.register(OPERATOR, self.operator)
        self.error: Optional[str] = None
        self.trace.header = self._header()

    # -- directory -----------------------------------------------------------------

    def client(self, k: int) -> Client:
        c = self.clients.get(k)
        if c is None:
            c = self.clients[k] = Client(self, k)
            self.net.register(c.key, c)
        return c

    def on_activated(self, r: Replica) -> None:
        e = r.config.epoch
        self.activated[e] = self.activated.get(e, 0) + 1
        if e > self.active_epoch:
            self.active_epoch = e
            self.trace.record(self.sched.now, "directory", "c:0", active=e)

    def pick_member(self, turn: int) -> Key:
        members = self.configs[self.active_epoch].members
        return members[turn % len(members)].key

    # -- schedule ----------------------------------------------------------------------

    def _install(self) -> None:
        for m in self.genesis.members:
            self.sched.at(0, self.replicas[m.key].start_genesis)
        for ev in self.scenario.schedule:
            self.sched.at(ev.at, self._fire, ev)
        wl = self.scenario.workload
        if wl is not None:
            stop = wl.stop or self.scenario.horizon // 2
            for k in range(1, wl.clients + 1):
                self.sched.at(wl.start + k, self._workload_tick, k, 1, stop)

    def _workload_tick(self, k: int, seq: int, stop: int) -> None:
        wl = self.scenario.workload
        assert wl is not None
        bad = wl.invalid_every and seq % wl.invalid_every == 0
        payload = f"{'invalid ' if bad else ''}set c{k}k{seq % 7} v{seq}".encode()
        self.client(k).submit(payload)
        nxt = self.sched.now + wl.interval
        if nxt <= stop:
            self.sched.at(nxt, self._workload_tick, k, seq + 1, stop)

    def _fire(self, ev: Event) -> None:
        a = ev.args
        self.trace.record(self.sched.now, "scheduled", "c:0", kind=ev.kind,
                          **{k: v for k, v in a.items() if v is not None})
        if ev.kind in FAULT_KINDS:
            key = parse_replica(a["replica"])
            self.trace.record(self.sched.now, "fault", rname(key), kind=ev.kind)
            self.replicas[key].crash(ev.kind)
        elif ev.kind == "epoch_change":
            self._epoch_change(a["target"])
        elif ev.kind == "delay_lane":
            self.net.lane_delay[(a["epoch"], a["lane"])] = a["extra"]
        elif ev.kind == "delay_link":
            for s in self._expand(a["src"]):
                for d in self._expand(a["dst"]):
                    if a.get("message"):
                        self.net.kind_delay[(s, d, a["message"])] = a["extra"]
                    else:
                        self.net.link_delay[(s, d)] = a["extra"]
        elif ev.kind == "client_tx":
            target = parse_replica(a["target"]) if a.get("target") else None
            self.client(a["client"]).submit(a["payload"].encode(), target, a["resubmit"])

    def _expand(self, spec: str) -> list[Key]:
        e, i = str(spec).split(":")
        if i == "*":
            return [m.key for m in self.configs[int(e)].members]
        return [(int(e), int(i))]

    def _epoch_change(self, target: int) -> None:
        cur = self.configs[self.active_epoch]
        ec = EpochChange(cur.epoch, self.configs[target])
        for m in cur.members[:cur.f + 1]:
            self.net.send(OPERATOR, m.key, Submit(ec))

    # -- run ---------------------------------------------------------------------------

    def run(self) -> Trace:
        self._install()
        try:
            self.sched.run(self.scenario.horizon)
        except Exception as exc:  # noqa: BLE001 - reported in the trace
            self.error = f"{type(exc).__name__}: {exc}"
            self.trace.record(self.sched.now, "runtime_violation", "c:0", error=self.error,
                              where=traceback.format_exc().strip().splitlines()[-2].strip())
        self.trace.footer = self._footer()
        return self.trace

    def _header(self) -> dict[str, Any]:
        sc = self.scenario
        return {
            "format": "epochswitch-trace/1",
            "name": sc.name,
            "seed": sc.seed,
            "horizon": sc.horizon,
            "delay": [sc.min_delay, sc.max_delay],
            "exval": sc.exval,
            "exval_overrides": dict(sc.exval_overrides),
            "signature_scheme": sc.signature_scheme,
            "genesis": self.genesis.epoch,
            "configs": {str(e): c.encode().hex() for e, c in self.configs.items()},
            "faulty": {rname(k): v for k, v in sorted(sc.faulty().items())},
            "over_threshold": sc.over_threshold(),
            "liveness_slack": sc.params.liveness_slack,
        }

    def _footer(self) -> dict[str, Any]:
        return {
            "end_time": self.sched.now,
            "steps": self.sched.steps,
            "messages": self.net.sent,
            "error": self.error,
            "active_epoch": self.active_epoch,
            "replicas": [self.replicas[k].summary() for k in sorted(self.replicas)],
        }


def run(sc: Scenario, trace_messages: bool = True) -> Trace:
    return Simulation(sc, trace_messages).run()


__all__ = ["Client", "Simulation", "run"]
