from __future__ import annotations

import copy
from typing import Any, Callable

import pytest

from epochswitch.core_model import (
    ConsensusKind,
    EpochConfig,
    FaultModel,
    ReplicaId,
    SigningKey,
)
from epochswitch.runner import load_scenario
from epochswitch.sim.harness import run
from epochswitch.sim.scheduler import Network, Scheduler
from epochswitch.sim.trace import Trace

SEED = b"unit-tests"


def key_for(epoch: int, index: int) -> SigningKey:
    return SigningKey.derive(SEED, f"{epoch}:{index}")


def make_config(epoch: int, n: int, f: int, fm: FaultModel = FaultModel.BYZANTINE,
                ck: ConsensusKind = ConsensusKind.SEQUENCER) -> EpochConfig:
    members = tuple(ReplicaId(epoch, i, key_for(epoch, i).public_key) for i in range(n))
    return EpochConfig(epoch, members, f, fm, ck)


class Node:
    """Minimal consensus host: collects released entries in order."""

    def __init__(self, cluster: "Cluster", key: tuple[int, int]) -> None:
        self.cluster = cluster
        self.key = key
        self.replica: Any = None
        self.log: list = []
        self.events: list[tuple[int, str, dict]] = []

    def now(self) -> int:
        return self.cluster.sched.now

    def send(self, dst, msg) -> None:
        self.cluster.net.send(self.key, dst, msg)

    def set_timer(self, delay: int, fn: Callable[[], None]) -> None:
        self.cluster.sched.after(delay, fn)

    def trace(self, ev: str, **fields: Any) -> None:
        self.events.append((self.cluster.sched.now, ev, fields))

    def on_decided(self) -> None:
        while True:
            e = self.replica.poll_decided()
            if e is None:
                break
            self.log.append(e)

    def deliver(self, src, msg) -> None:
        self.replica.on_message(src, msg)


class Cluster:
    def __init__(self, cfg: EpochConfig, cls, seed: int = 1, delay=(5, 15), **kw: Any) -> None:
        self.cfg = cfg
        self.sched = Scheduler(seed)
        self.net = Network(self.sched, delay[0], delay[1], trace_messages=False)
        self.nodes: dict[tuple[int, int], Node] = {}
        for m in cfg.members:
            node = Node(self, m.key)
            node.replica = cls(cfg, m, node, **kw)
            self.nodes[m.key] = node
            self.net.register(m.key, node)

    def node(self, index: int) -> Node:
        return self.nodes[(self.cfg.epoch, index)]

    def crash(self, index: int) -> None:
        self.net.dead.add((self.cfg.epoch, index))

    def run(self, until: int) -> None:
        self.sched.run(until)

    def logs(self) -> dict[tuple[int, int], list]:
        return {k: [(e.position, e.content) for e in n.log] for k, n in self.nodes.items()}


_TRACES: dict[str, Trace] = {}


def bundled_trace(name: str) -> Trace:
    """Run a bundled scenario once per session; callers get a private copy."""
    if name not in _TRACES:
        _TRACES[name] = run(load_scenario(name))
    return copy.deepcopy(_TRACES[name])


@pytest.fixture
def worked_trace() -> Trace:
    return bundled_trace("worked_example")


# -- acceptance summary -------------------------------------------------------------------

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report) -> None:
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        title = getattr(report, "acceptance_title", None) or report.nodeid.split("::")[-1]
        _ACCEPTANCE[title] = "PASS" if report.outcome == "passed" else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        rep.acceptance_title = f"criterion {marker.args[0]}: {marker.args[1]}"


def pytest_configure(config) -> None:
    config.addinivalue_line("markers", "acceptance(num, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter) -> None:
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for title in sorted(_ACCEPTANCE, key=lambda t: (len(t.split(":")[0]), t)):
        terminalreporter.write_line(f"{_ACCEPTANCE[title]}  {title}")
