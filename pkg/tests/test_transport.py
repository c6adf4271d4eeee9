import numpy as np
import pytest

from lghdiff.diffusion import AgentData, DiffusionConfig, run_diffusion
from lghdiff.errors import ProtocolError
from lghdiff.noise_protocol import UnprotectedEdgeWarning
from lghdiff.topology import Adjacency, Topology
from lghdiff.transport import (
    Message, MessageKind, TransportLog, direct_key_messages, relay_pair_exchange, send,
)


@pytest.fixture
def path():
    return Adjacency.from_edges(3, [(0, 1), (1, 2)])


def test_send_to_neighbour_delivered(path):
    log = TransportLog()
    msg = Message(0, 1, 1, MessageKind.MASKED_MODEL, 3.0)
    assert send(log, msg, path) is msg
    assert log.messages == [msg] and not log.violations


def test_send_to_non_neighbour_is_violation(path):
    log = TransportLog()
    assert send(log, Message(0, 2, 1, MessageKind.MASKED_MODEL), path) is None
    assert not log.messages
    assert len(log.violations) == 1 and "not a neighbour" in log.violations[0].reason


def test_relay_leg_outside_hub_neighbourhood(path):
    log = TransportLog()
    send(log, Message(1, 2, 0, MessageKind.PUBLIC_KEY, None, relay_hub=0), path)
    assert len(log.violations) == 1


def test_relay_through_hub(path):
    log = TransportLog()
    left_keys, right_keys = np.array([0.3, 0.4]), np.array([0.8, 0.1])
    got_left, got_right = relay_pair_exchange(log, path, 1, 0, 2, left_keys, right_keys, 7)
    assert got_left is right_keys and got_right is left_keys
    legs = [(m.src, m.dst, m.relay_hub, m.iteration) for m in log.messages]
    assert legs == [(0, 1, 1, 7), (1, 2, 1, 7), (2, 1, 1, 7), (1, 0, 1, 7)]
    assert not log.violations and not direct_key_messages(log) and log.bypassed == 0


def test_relay_used_even_when_partners_adjacent():
    tri = Adjacency.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    log = TransportLog()
    relay_pair_exchange(log, tri, 1, 0, 2, "a", "b")
    assert all(1 in (m.src, m.dst) for m in log.messages)


def test_relay_errors(path):
    log = TransportLog()
    with pytest.raises(ProtocolError):
        relay_pair_exchange(log, path, 1, 0, 0, 1, 1)
    with pytest.raises(ProtocolError):
        relay_pair_exchange(log, path, 0, 1, 2, 1, 1)


def test_dump_format(path):
    log = TransportLog()
    send(log, Message(0, 1, 3, MessageKind.SPLIT_ANNOUNCEMENT), path)
    relay_pair_exchange(log, path, 1, 0, 2, 1, 2, 3)
    lines = log.dump().splitlines()
    assert lines[0] == "3 split_announcement 1 2 -"
    assert lines[1] == "3 public_key 1 2 2"


def test_count_only_mode(path):
    log = TransportLog(keep_messages=False)
    relay_pair_exchange(log, path, 1, 0, 2, 1, 2)
    assert log.messages == [] and log.delivered == 4


def _data(K, M=2, N=20, seed=0):
    rng = np.random.default_rng(seed)
    return [AgentData(u := rng.normal(size=(N, M)), u @ np.ones(M)) for _ in range(K)]


def test_full_run_on_path_graph_relays_only(path):
    topo = Topology.from_adjacency(path)
    cfg = DiffusionConfig(iterations=20, audit_transport=True)
    with pytest.warns(UnprotectedEdgeWarning):
        res = run_diffusion(cfg, topo, _data(3), "lgh", 0, 1)
    log = res.transport
    assert not log.violations
    assert not [m for m in log.messages if {m.src, m.dst} == {0, 2}]
    keys = log.of_kind(MessageKind.PUBLIC_KEY)
    # hub 1 is the only agent with two neighbours: one pair, four legs per iteration
    assert len(keys) == 4 * 20
    assert {(m.src, m.dst) for m in keys} == {(0, 1), (1, 2), (2, 1), (1, 0)}


def test_message_count_per_neighbourhood():
    topo = Topology.build(12, "erdos_renyi", seed=2, p=0.4)
    adj = topo.adjacency
    cfg = DiffusionConfig(iterations=3, audit_transport=True)
    res = run_diffusion(cfg, topo, _data(12), "lgh", 0, 1)
    log = res.transport
    for i in range(1, 4):
        for k in range(12):
            deg = adj.degree(k)
            ann = [m for m in log.messages if m.iteration == i and m.src == k
                   and m.kind == MessageKind.SPLIT_ANNOUNCEMENT]
            split = ann[0].payload
            keys = [m for m in log.messages if m.iteration == i and m.relay_hub == k]
            masked = [m for m in log.messages if m.iteration == i and m.dst == k
                      and m.kind == MessageKind.MASKED_MODEL]
            assert len(ann) == deg and len(masked) == deg
            assert len(keys) == 4 * len(split.positive) * len(split.negative)
    assert not log.violations and log.bypassed == 0
