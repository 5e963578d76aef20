from __future__ import annotations

import random

import pytest

from epochswitch.consensus.base import ConsensusReplica
from epochswitch.consensus.multilane import MultiLaneReplica
from epochswitch.consensus.sequencer import SequencerReplica
from epochswitch.core_model import ConsensusKind, FaultModel, Noop, Transaction

from conftest import Cluster, Node, make_config

KINDS = [
    pytest.param(SequencerReplica, {"vc_timeout": 300}, id="sequencer"),
    pytest.param(MultiLaneReplica, {"noop_timeout": 100}, id="multilane"),
]


def tx(s: str) -> Transaction:
    return Transaction(s.encode())


def client_txs(log) -> list:
    return [c for _, c in log if isinstance(c, Transaction)]


class _Stub(ConsensusReplica):
    kind = "stub"

    def _propose(self, content) -> None:
        pass

    def _on_message(self, src, msg) -> None:
        pass


def _stub():
    cfg = make_config(1, 4, 1)
    cl = Cluster(cfg, SequencerReplica)
    node = Node(cl, cfg.members[0].key)
    node.replica = _Stub(cfg, cfg.members[0], node)
    return node


def test_empty_instance_has_nothing_decided():
    assert _stub().replica.poll_decided() is None


def test_release_is_in_position_order():
    node = _stub()
    node.replica._commit(2, tx("b"))
    assert node.replica.poll_decided() is None
    node.replica._commit(1, tx("a"))
    assert [(e.position, e.content) for e in node.log] == [(1, tx("a")), (2, tx("b"))]


def test_released_duplicate_becomes_noop():
    node = _stub()
    node.replica._commit(1, tx("a"))
    node.replica._commit(2, tx("a"))
    assert node.log[1].content == Noop("duplicate")


def test_conflicting_internal_commit_is_an_error():
    node = _stub()
    node.replica._commit(3, tx("a"))
    with pytest.raises(AssertionError):
        node.replica._commit(3, tx("b"))


@pytest.mark.parametrize("cls,kw", KINDS)
def test_single_transaction_is_decided(cls, kw):
    cl = Cluster(make_config(1, 4, 1), cls, **kw)
    assert cl.node(1).replica.propose(tx("T1"))
    cl.run(2000)
    for log in cl.logs().values():
        assert client_txs(log) == [tx("T1")]


@pytest.mark.parametrize("cls,kw", KINDS)
def test_proposed_twice_decided_once(cls, kw):
    cl = Cluster(make_config(1, 4, 1), cls, **kw)
    cl.node(0).replica.propose(tx("T1"))
    cl.node(0).replica.propose(tx("T1"))
    cl.node(2).replica.propose(tx("T1"))
    cl.run(2000)
    for log in cl.logs().values():
        assert client_txs(log) == [tx("T1")]


@pytest.mark.parametrize("cls,kw", KINDS)
def test_propose_after_halt_rejected(cls, kw):
    cl = Cluster(make_config(1, 4, 1), cls, **kw)
    r = cl.node(0).replica
    r.halt()
    r.halt()
    assert r.halted
    assert not r.propose(tx("T1"))
    assert sum(1 for _, ev, _ in cl.node(0).events if ev == "consensus_halt") == 1


@pytest.mark.parametrize("cls,kw", KINDS)
def test_halt_at_f_replicas_others_progress(cls, kw):
    cl = Cluster(make_config(1, 4, 1), cls, **kw)
    cl.node(3).replica.halt()
    cl.node(1).replica.propose(tx("T1"))
    cl.run(3000)
    for i in range(3):
        assert client_txs(cl.logs()[(1, i)]) == [tx("T1")]


def test_sequencer_leader_orders_in_arrival_order():
    cfg = make_config(1, 3, 1, FaultModel.CRASH)
    cl = Cluster(cfg, SequencerReplica, delay=(5, 5))
    leader = cl.node(0).replica
    assert leader.is_leader
    leader.propose(tx("T1"))
    leader.propose(tx("T2"))
    cl.run(500)
    for log in cl.logs().values():
        assert log == [(1, tx("T1")), (2, tx("T2"))]


def test_sequencer_leader_crash_new_leader_continues():
    cfg = make_config(1, 3, 1, FaultModel.CRASH)
    cl = Cluster(cfg, SequencerReplica, vc_timeout=100)
    cl.node(0).replica.propose(tx("T1"))
    cl.run(200)
    assert client_txs(cl.logs()[(1, 1)]) == [tx("T1")]
    cl.crash(0)
    cl.node(1).replica.propose(tx("T2"))
    cl.run(3000)
    l1, l2 = cl.logs()[(1, 1)], cl.logs()[(1, 2)]
    assert l1 == l2
    assert l1[0] == (1, tx("T1"))
    assert client_txs(l1) == [tx("T1"), tx("T2")]
    assert cl.node(1).replica.view >= 1


def test_sequencer_concurrent_proposals_deterministic():
    def once():
        cl = Cluster(make_config(1, 4, 1), SequencerReplica, seed=7)
        cl.node(1).replica.propose(tx("A"))
        cl.node(2).replica.propose(tx("B"))
        cl.run(1000)
        return cl.logs()
    a, b = once(), once()
    assert a == b
    logs = list(a.values())
    assert all(log == logs[0] for log in logs)
    assert sorted(c.payload for c in client_txs(logs[0])) == [b"A", b"B"]


def test_multilane_round_robin_interleave():
    cfg = make_config(1, 4, 1, ck=ConsensusKind.MULTILANE)
    cl = Cluster(cfg, MultiLaneReplica, noop_timeout=200)
    for i in range(4):
        cl.node(i).replica.propose(tx(f"T{i}"))
    cl.run(1000)
    for log in cl.logs().values():
        assert log[:4] == [(i + 1, tx(f"T{i}")) for i in range(4)]


def test_multilane_delayed_lane_commits_out_of_order_released_in_order():
    cfg = make_config(1, 4, 1, ck=ConsensusKind.MULTILANE)
    cl = Cluster(cfg, MultiLaneReplica, noop_timeout=500, delay=(5, 5))
    cl.net.lane_delay[(1, 1)] = 100
    for i in range(4):
        cl.node(i).replica.propose(tx(f"T{i}"))
    cl.run(2000)
    node = cl.node(0)
    when = {f["pos"]: t for t, ev, f in node.events if ev == "internal_commit"}
    assert when[3] < when[2] and when[4] < when[2]
    assert [p for p, _ in cl.logs()[(1, 0)][:4]] == [1, 2, 3, 4]


def test_multilane_silent_member_slots_become_noops():
    cfg = make_config(1, 4, 1, ck=ConsensusKind.MULTILANE)
    cl = Cluster(cfg, MultiLaneReplica, noop_timeout=60)
    cl.crash(3)
    for k in range(6):
        cl.node(k % 3).replica.propose(tx(f"T{k}"))
    cl.run(3000)
    log = cl.logs()[(1, 0)]
    assert sorted(c.payload for c in client_txs(log)) == [f"T{k}".encode() for k in range(6)]
    lane3 = [c for p, c in log if p % 4 == 0]
    assert lane3 and all(isinstance(c, Noop) for c in lane3)


@pytest.mark.parametrize("cls,kw", KINDS)
def test_randomized_schedules_agree(cls, kw):
    kind = ConsensusKind.MULTILANE if cls is MultiLaneReplica else ConsensusKind.SEQUENCER
    for seed in range(100):
        rng = random.Random(seed)
        n, f = rng.choice([(4, 1), (5, 1), (7, 2)])
        cl = Cluster(make_config(1, n, f, ck=kind), cls, seed=seed,
                     delay=(1, rng.randint(1, 20)), **kw)
        proposed = [tx(f"s{seed}t{k}") for k in range(rng.randint(1, 8))]
        for t in proposed:
            cl.sched.at(rng.randint(0, 200), cl.node(rng.randrange(n)).replica.propose, t)
        cl.run(4000)
        logs = list(cl.logs().values())
        longest = max(logs, key=len)
        for log in logs:
            assert log == longest[:len(log)], f"seed {seed}"
        ids = [c.id for c in client_txs(longest)]
        assert len(ids) == len(set(ids))
        assert set(ids) == {t.id for t in proposed}
