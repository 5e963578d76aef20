"""Forged-trace fixtures: each one breaks exactly the property its check guards."""
from __future__ import annotations

import dataclasses
from typing import Callable

from epochswitch.core_model import HandoverCertificate, Noop, Transaction, encode_content
from epochswitch.sim.trace import Trace

from conftest import bundled_trace


def _renumber(t: Trace) -> Trace:
    for k, e in enumerate(t.events):
        e["i"] = k
    return t


def _append(t: Trace, **ev) -> Trace:
    t.events.append({"i": len(t.events), "t": t.events[-1]["t"], **ev})
    return t


def _emits(t: Trace, r: str) -> list[dict]:
    return [e for e in t.events if e["ev"] == "emit" and e["r"] == r]


def _certs(t: Trace, old: int) -> list[dict]:
    return [e for e in t.events if e["ev"] == "cert" and e["old"] == old]


def _set_cert(t: Trace, old: int, **change) -> Trace:
    evs = _certs(t, old)
    c = dataclasses.replace(HandoverCertificate.decode(bytes.fromhex(evs[0]["cert"])), **change)
    for e in evs:
        e.update(h=c.h, digest=c.digest.hex(), cert=c.encode().hex())
    return t


def runtime() -> Trace:
    return _append(bundled_trace("worked_example"), ev="runtime_violation", r="c:0", error="x")


def safety() -> Trace:
    t = bundled_trace("worked_example")
    _emits(t, "2:6")[2]["tx"] = Transaction(b"T6").id.hex()
    return t


def oracle() -> Trace:
    t = bundled_trace("worked_example")
    next(e for e in t.events if e["ev"] == "sync_done")["digest"] = "00" * 32
    return t


def integrity() -> Trace:
    t = bundled_trace("worked_example")
    last = _emits(t, "1:1")[-1]
    return _append(t, ev="emit", r="1:1", op=last["op"] + 1, tx=_emits(t, "1:1")[0]["tx"],
                   se=1, sp=last["sp"] + 1)


def exval() -> Trace:
    t = bundled_trace("worked_example")
    _emits(t, "1:3")[0]["tx"] = Transaction(b"never committed").id.hex()
    return t


def liveness() -> Trace:
    t = bundled_trace("worked_example")
    t.events.insert(20, {"i": -1, "t": t.events[20]["t"], "ev": "client_submit", "r": "c:9",
                         "tx": Transaction(b"lost").id.hex(), "payload": "lost",
                         "resubmit": True})
    return _renumber(t)


def unique_certificates() -> Trace:
    t = bundled_trace("worked_example")
    return _set_cert(t, 1, h=10)


def single_active_epoch() -> Trace:
    return _append(bundled_trace("worked_example"), ev="activate", r="2:6", epoch=7, pos=1)


def no_pre_quorum_shutdown() -> Trace:
    t = bundled_trace("worked_example")
    halt = next(e for e in t.events if e["ev"] == "halt")
    t.events.remove(halt)
    t.events.insert(60, halt)
    return _renumber(t)


def activation_quorum() -> Trace:
    # the quorum-completing Done is replaced, leaving f matching Dones at activation
    t = bundled_trace("worked_example")
    act = next(e for e in t.events if e["ev"] == "activate" and e["epoch"] == 2)
    noop = encode_content(Noop("forged")).hex()
    for e in t.events:
        if e["ev"] == "commit" and e["epoch"] == 2 and e["pos"] == act["pos"]:
            e["content"] = noop
    return t


def no_post_preemption_activation() -> Trace:
    return _append(bundled_trace("preemption"), ev="activate", r="2:0", epoch=2, pos=3)


def phase_order() -> Trace:
    t = bundled_trace("worked_example")
    next(e for e in t.events if e["ev"] == "phase")["new"] = "Active"
    return t


def trust_chain() -> Trace:
    return _set_cert(bundled_trace("four_transitions"), 2, prev_cert_hash=b"\1" * 32)


def fairness() -> Trace:
    t = bundled_trace("worked_example")
    t.events.remove(next(e for e in t.events if e["ev"] == "deliver" and e["r"] == "1:2"))
    return _renumber(t)


FORGERIES: dict[str, Callable[[], Trace]] = {
    f.__name__: f for f in (
        runtime, safety, oracle, integrity, exval, liveness, unique_certificates,
        single_active_epoch, no_pre_quorum_shutdown, activation_quorum,
        no_post_preemption_activation, phase_order, trust_chain, fairness)
}
