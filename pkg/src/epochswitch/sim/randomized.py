"""Seeded random scenarios for property runs."""
from __future__ import annotations

import random

from ..core_model import ConsensusKind, FaultModel
from .scenario import EpochSpec, Event, Params, Scenario, Workload

SAFETY_CHECKS = ("safety", "integrity", "exval", "oracle")

_SIZES = {FaultModel.BYZANTINE: [(4, 1), (5, 1), (7, 2), (4, 0)],
          FaultModel.CRASH: [(3, 1), (4, 1), (5, 2), (2, 0)]}


def random_scenario(seed: int, max_transitions: int = 4) -> Scenario:
    """Mixed consensus kinds, 1..max_transitions transitions, at most f faults per epoch."""
    rng = random.Random(seed)
    lo = rng.randint(1, 8)
    hi = lo + rng.choice([0, 5, 10, 20])
    transitions = rng.randint(1, max_transitions)
    epochs = []
    for e in range(1, transitions + 2):
        fm = rng.choice([FaultModel.BYZANTINE, FaultModel.CRASH])
        n, f = rng.choice(_SIZES[fm])
        ck = rng.choice([ConsensusKind.SEQUENCER, ConsensusKind.MULTILANE])
        epochs.append(EpochSpec(e, tuple(range(n)), f, fm, ck))

    gap = 40 * hi + 400
    schedule: list[Event] = []
    t = rng.randint(100, 300)
    for spec in epochs[1:]:
        schedule.append(Event(t, "epoch_change", {"target": spec.epoch}))
        t += gap + rng.randint(0, gap // 2)
    horizon = t + 6 * gap

    extra_lane = 0
    for spec in epochs:
        budget = spec.f
        for _ in range(rng.randint(0, budget)):
            idx = rng.choice(spec.members)
            key = f"{spec.epoch}:{idx}"
            if any(ev.args.get("replica") == key for ev in schedule):
                continue
            kinds = ["crash", "silent"]
            if spec.fault_model == FaultModel.BYZANTINE:
                kinds += ["equivocate_done", "equivocate_done", "tamper_sync"]
            kind = rng.choice(kinds)
            at = 1 if kind in ("equivocate_done", "tamper_sync") else rng.randint(1, horizon // 2)
            schedule.append(Event(at, kind, {"replica": key}))
        if spec.consensus == ConsensusKind.MULTILANE and rng.random() < 0.3:
            extra_lane = max(extra_lane, rng.randint(10, 60))
            schedule.append(Event(0, "delay_lane", {
                "epoch": spec.epoch, "lane": rng.randrange(len(spec.members)),
                "extra": extra_lane}))
    if rng.random() < 0.3:
        a, b = rng.sample(epochs, 2) if len(epochs) > 1 else (epochs[0], epochs[0])
        schedule.append(Event(0, "delay_link", {
            "src": f"{a.epoch}:*", "dst": f"{b.epoch}:{rng.choice(b.members)}",
            "extra": rng.randint(5, 80), "message": None}))

    invalid = rng.choice([0, 0, 4, 7])
    params = Params(noop_timeout=max(150, 3 * (hi + extra_lane)), sync_timeout=max(200, 20 * hi))
    wl = Workload(clients=rng.randint(1, 3), interval=rng.choice([30, 50, 80]), start=10,
                  stop=max(t, horizon // 2), invalid_every=invalid)
    schedule.sort(key=lambda ev: ev.at)
    return Scenario(seed=seed, epochs=tuple(epochs), schedule=tuple(schedule), horizon=horizon,
                    min_delay=lo, max_delay=hi, name=f"random-{seed}", params=params,
                    workload=wl, exval="reject_invalid_tag" if invalid else "always")


__all__ = ["SAFETY_CHECKS", "random_scenario"]
