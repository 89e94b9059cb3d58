import math
import random
from collections import deque

import pytest

from kdack.net_model import (
    EnergyState, FaultSpec, Locator, Medium, Outcome, Placement, TopologySpec, build_topology,
)
from kdack.protocol import DataChunk, Message, MsgKind


def _data(cid=0):
    return Message(MsgKind.DATA, chunk=DataChunk(cid, 0, 1), current_source=0, k_remaining=1)


def _medium(n=2, loss=0.0, seed=0, levels=None, **kw):
    topo = build_topology(TopologySpec(n, Placement.LINE))
    energy = [EnergyState(level=(levels or {}).get(i, 10_000.0)) for i in range(n)]
    return Medium(topo, energy, FaultSpec(link_loss_rate=loss), random.Random(seed), **kw), energy


def test_line_of_101_is_a_100_hop_chain():
    topo = build_topology(TopologySpec(101, Placement.LINE))
    for i in range(101):
        assert topo.neighbours[i] == {j for j in (i - 1, i + 1) if 0 <= j <= 100}
    # BFS hop distance from one end to the other
    dist = {0: 0}
    todo = deque([0])
    while todo:
        u = todo.popleft()
        for v in topo.neighbours[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                todo.append(v)
    assert dist[100] == 100


def test_coincident_nodes_are_neighbours():
    topo = build_topology(TopologySpec(2, Placement.EXPLICIT, 0.01, ((0.3, 0.3), (0.3, 0.3))))
    assert topo.neighbours[0] == {1} and topo.neighbours[1] == {0}


def test_random_neighbours_match_pairwise_distances():
    topo = build_topology(TopologySpec(50, Placement.RANDOM, 0.25), 7)
    for i in range(50):
        expected = set()
        for j in range(50):
            if i == j:
                continue
            a, b = topo.locators[i], topo.locators[j]
            if math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2) <= 0.25:
                expected.add(j)
        assert topo.neighbours[i] == expected


def test_topology_is_reproducible_and_symmetric():
    a = build_topology(TopologySpec(30, Placement.RANDOM, 0.3), 11)
    b = build_topology(TopologySpec(30, Placement.RANDOM, 0.3), 11)
    assert a.locators == b.locators
    for i, nb in enumerate(a.neighbours):
        assert all(i in a.neighbours[j] for j in nb)


def test_grid_placement_stays_in_unit_square():
    topo = build_topology(TopologySpec(10, Placement.GRID, 0.4))
    assert len(topo.locators) == 10
    assert all(0 <= p.x <= 1 and 0 <= p.y <= 1 for p in topo.locators)


@pytest.mark.parametrize("spec", [TopologySpec(1), TopologySpec(5, radio_range=0.0),
                                  TopologySpec(5, radio_range=-1.0)])
def test_build_topology_rejects_bad_parameters(spec):
    with pytest.raises(ValueError):
        build_topology(spec)


def test_locator_must_be_in_unit_square():
    with pytest.raises(ValueError):
        Locator(1.2, 0.0)
    with pytest.raises(ValueError):
        Locator(float("nan"), 0.0)


def test_fault_spec_sets_are_disjoint():
    with pytest.raises(ValueError):
        FaultSpec(corrupt_nodes=frozenset({1}), crashed_nodes=frozenset({1}))
    with pytest.raises(ValueError):
        FaultSpec(link_loss_rate=1.5)


def test_energy_thresholds_ordered():
    with pytest.raises(ValueError):
        EnergyState(theta_refuse=100, theta_delegate=10)


def test_lossless_transmit_delivers_and_debits():
    m, energy = _medium()
    outcome, arrival = m.transmit(0, 1, _data(), slot=3)
    assert outcome is Outcome.DELIVERED and arrival == 4
    assert energy[0].level == 10_000 - 2
    assert m.receive(1)
    assert energy[1].level == 10_000 - 1
    assert m.log[0].bytes == 64


def test_certain_loss_always_lost():
    m, energy = _medium(loss=1.0)
    for s in range(50):
        assert m.transmit(0, 1, _data(), s) == (Outcome.LOST, None)
    # a lost attempt still costs the sender
    assert energy[0].level == 10_000 - 2 * 50
    assert len(m.log) == 50


def test_loss_frequency_matches_rate():
    m, _ = _medium(loss=0.3, seed=42, levels={0: 1e9})
    lost = sum(m.transmit(0, 1, _data(), s)[0] is Outcome.LOST for s in range(10_000))
    assert abs(lost / 10_000 - 0.3) <= 0.02


def test_refused_when_sender_weak_or_crashed():
    m, energy = _medium(levels={0: 5.0})
    assert m.transmit(0, 1, _data(), 0) == (Outcome.REFUSED, None)
    assert energy[0].level == 5.0
    assert m.log[0].outcome is Outcome.REFUSED and m.log[0].bytes == 0

    topo = build_topology(TopologySpec(2))
    energy = [EnergyState(), EnergyState()]
    m = Medium(topo, energy, FaultSpec(crashed_nodes=frozenset({0})), random.Random(0))
    assert m.transmit(0, 1, _data(), 0)[0] is Outcome.REFUSED
    assert energy[0].level == 10_000


def test_crashed_receiver_loses_message():
    topo = build_topology(TopologySpec(3))
    m = Medium(topo, [EnergyState() for _ in range(3)], FaultSpec(crashed_nodes=frozenset({1})),
               random.Random(0))
    assert m.transmit(0, 1, _data(), 0)[0] is Outcome.LOST


def test_refusing_receiver_keeps_radio_off():
    m, energy = _medium(levels={1: 3.0})
    assert not m.receive(1)
    assert energy[1].level == 3.0


def test_direct_ack_out_of_ack_range_is_lost():
    topo = build_topology(TopologySpec(11))
    energy = [EnergyState() for _ in range(11)]
    m = Medium(topo, energy, FaultSpec(), random.Random(0), ack_range=0.25)
    ack = Message(MsgKind.ACK, chunk=DataChunk(0, 0, 10), current_source=0)
    assert m.transmit(2, 0, ack, 0)[0] is Outcome.DELIVERED   # distance 0.2
    assert m.transmit(5, 0, ack, 0)[0] is Outcome.LOST        # distance 0.5


def test_collision_mode_destroys_simultaneous_arrivals():
    topo = build_topology(TopologySpec(3))
    m = Medium(topo, [EnergyState() for _ in range(3)], FaultSpec(), random.Random(0), collisions=True)
    m.transmit(0, 1, _data(), 0)
    m.transmit(2, 1, _data(1), 0)
    assert m.collided(1, 1)
    assert [r.outcome for r in m.log] == [Outcome.COLLIDED, Outcome.COLLIDED]
    # default medium is collision-free
    m2, _ = _medium(n=3)
    m2.transmit(0, 1, _data(), 0)
    m2.transmit(2, 1, _data(1), 0)
    assert not m2.collided(1, 1)


def test_log_line_format():
    m, _ = _medium()
    m.transmit(0, 1, _data(7), 5)
    assert m.log[0].csv_line() == "5,DATA,0,1,7,1,64,delivered"
