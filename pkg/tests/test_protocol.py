import math
import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import line, sends

from kdack.net_model import FaultSpec, Placement, TopologySpec
from kdack.protocol import (
    DataChunk, Message, MsgKind, ProtocolParams, adapt_k, adapt_timer, base_timer, probe_schedule,
)
from kdack.sim_engine import Injection, Scenario, Simulator, TableMode, run


def test_message_sizes():
    chunk = DataChunk(0, 0, 1)
    assert Message(MsgKind.DATA, chunk=chunk).size_bytes == 64
    assert Message(MsgKind.ACK, chunk=chunk).size_bytes == 16
    assert Message(MsgKind.MEMBER_REQ).size_bytes == 16
    assert Message(MsgKind.MEMBER_RESP, entries=((1, None), (2, None))).size_bytes == 32


@pytest.mark.parametrize("kw", [{"K": 0}, {"I": 0}, {"c_t": 0}, {"k_max": 0}, {"refresh_period": 0}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        ProtocolParams(**kw)


def test_timer_rules():
    assert base_timer(4, 2.5) == 10
    assert adapt_timer(10, 1000) == 15
    assert adapt_timer(15, 20) == 20
    assert base_timer(8, 2.5) == 2 * base_timer(4, 2.5)


@given(k=st.integers(1, 500), c=st.floats(0.5, 10))
def test_timer_grows_with_k(k, c):
    assert base_timer(k + 1, c) >= base_timer(k, c) >= 1


def test_adapt_k_saturates_and_halves():
    k, seen = 4, []
    for _ in range(6):
        k = adapt_k(k, "success", 8)
        seen.append(k)
    assert seen == [5, 6, 7, 8, 8, 8]
    assert adapt_k(8, "exhausted", 8) == 4
    assert adapt_k(1, "exhausted", 8) == 1
    with pytest.raises(ValueError):
        adapt_k(3, "meh", 8)


def test_probe_schedule():
    assert probe_schedule(4) == [2, 1]
    assert probe_schedule(1) == []
    assert probe_schedule(10) == [5, 3, 2, 1]


def test_self_delivery_costs_nothing():
    rep, log = run(line(3, workload=[Injection(0, 2, 2)]))
    assert rep.delivered[0] and log == []


def test_empty_table_out_of_range_fails_immediately():
    sc = Scenario(TopologySpec(6), workload=[Injection(0, 0, 5)], table_mode=TableMode.EXPLICIT,
                  tables={1: [2], 2: [3]})
    rep, log = run(sc)
    assert not rep.delivered[0]
    assert log == [] and rep.bytes_total == 0
    assert rep.failures == [(0, 0, "exhausted")]


def test_empty_table_in_range_sends_direct():
    sc = Scenario(TopologySpec(3), workload=[Injection(0, 0, 1)], table_mode=TableMode.EXPLICIT, tables={})
    rep, log = run(sc)
    assert rep.delivered[0]
    assert len(sends(log, "DATA", 0, 1)) == 1


def test_happy_path_single_candidate_and_cache_emptied():
    sc = line(5, 4)
    sim = Simulator(sc, 0)
    rep = sim.run()
    assert rep.delivered[0]
    first = [r for r in rep.log if r.kind == "DATA" and r.src == 0]
    assert len(first) == 1
    assert rep.retries == 0
    assert all(not n.cache for n in sim.nodes)


def test_countdown_on_a_line():
    rep, log = run(line(5, 2))
    data = [(r.src, r.dst, r.k_remaining) for r in sends(log, "DATA")]
    assert data == [(0, 1, 2), (1, 2, 1), (2, 3, 2), (3, 4, 1), (4, 5, 2)]
    acks = [(r.src, r.dst, r.role) for r in sends(log, "ACK")]
    assert acks == [(2, 0, "custody"), (4, 2, "custody"), (5, 4, "delivery")]
    assert [n for _, n, _ in rep.k_trace] == [0, 2, 4]


def test_destination_acks_once_without_forwarding():
    rep, log = run(line(1, 4))
    assert [(r.kind, r.src, r.dst) for r in log] == [("DATA", 0, 1), ("ACK", 1, 0)]


def test_k1_every_hop_is_a_handoff():
    rep, log = run(line(10, 1))
    assert len(sends(log, "ACK")) == 10
    assert len(rep.k_trace) == 10


def test_corrupt_first_candidate_is_removed_then_bypassed():
    # node 0 knows 1 (corrupt) and 6, which leads to 5 by another way
    tables = {0: [1, 6], 1: [2], 2: [3], 3: [4], 4: [5], 6: [5]}
    sc = Scenario(TopologySpec(7), params=ProtocolParams(K=4), faults=FaultSpec(corrupt_nodes=frozenset({1})),
                  workload=[Injection(0, 0, 5)], table_mode=TableMode.EXPLICIT, tables=tables)
    sim = Simulator(sc, 0)
    rep = sim.run()
    assert rep.delivered[0]
    assert 1 not in sim.nodes[0].table
    assert 6 in sim.nodes[0].table
    assert [r.k_remaining for r in sends(rep.log, "DATA", 0, 1)] == [4, 4, 2, 1]
    assert rep.removed_members == 1


def test_corrupt_deeper_node_spares_first_hop():
    # 0-1-2-3(corrupt)-4-5 with a bypass 2 -> 6 -> 4
    tables = {0: [1], 1: [2], 2: [3, 6], 3: [4], 4: [5], 6: [4]}
    sc = Scenario(TopologySpec(7), params=ProtocolParams(K=4), faults=FaultSpec(corrupt_nodes=frozenset({3})),
                  workload=[Injection(0, 0, 5)], table_mode=TableMode.EXPLICIT, tables=tables)
    for seed in range(20):
        sim = Simulator(sc, seed)
        rep = sim.run()
        assert rep.delivered[0]
        assert 1 in sim.nodes[0].table
        # the K=1 probe to node 1 is never needed: a shorter probe gets acked first
        assert 1 not in [r.k_remaining for r in sends(rep.log, "DATA", 0, 1)]
        clean = Simulator(sc.with_faults(FaultSpec()), seed).run()
        if sends(rep.log, "DATA", 2, 3):
            assert rep.bytes_total > clean.bytes_total


def test_refusing_relay_is_silent_and_bypassed():
    tables = {0: [1, 2], 1: [2], 2: [3], 3: [4]}
    sc = Scenario(TopologySpec(5), params=ProtocolParams(K=2), workload=[Injection(0, 0, 4)],
                  table_mode=TableMode.EXPLICIT, tables=tables, energy_levels={1: 5.0})
    sim = Simulator(sc, 0)
    rep = sim.run()
    assert rep.delivered[0]
    assert not [r for r in rep.log if r.src == 1 and r.bytes > 0]
    assert 1 not in sim.nodes[0].table


def test_weak_relay_delegates_with_k1():
    sc = line(6, 4, energy_levels={2: 50.0})
    sim = Simulator(sc, 0)
    rep = sim.run()
    assert rep.delivered[0]
    assert [r.k_remaining for r in sends(rep.log, "DATA", 2, 3)] == [1]
    assert len(sends(rep.log, "ACK", 2, 0, role="energy")) == 1
    assert len(sends(rep.log, "ACK", 3, 0, role="custody")) == 1
    assert len(sends(rep.log, "ACK", 3, 2, role="confirm")) == 1
    assert 3 in [n for _, n, _ in rep.k_trace]
    assert sim.nodes[0].energy_reports[2] < 100


def test_timer_retry_keeps_slow_candidate():
    # c_t=2.5, K=4 -> wait 10; node 2 adds 7 slots so the ack takes 12
    sc = line(8, params=ProtocolParams(K=4, c_t=2.5), faults=FaultSpec(slow_nodes=((2, 7),)))
    sim = Simulator(sc, 0)
    rep = sim.run()
    assert [r.slot for r in sends(rep.log, "DATA", 0, 1)] == [0, 11]
    assert rep.retries == 1 and rep.delivered[0]
    assert 1 in sim.nodes[0].table


def test_late_ack_is_accepted():
    # node 2 so slow the ack misses even the enlarged wait; probes follow but the late ack ends them
    sc = line(8, params=ProtocolParams(K=4, c_t=2.5), faults=FaultSpec(slow_nodes=((2, 20),)))
    sim = Simulator(sc, 0)
    rep = sim.run()
    assert rep.delivered[0]
    assert 1 in sim.nodes[0].table


def _shortcut_scenario(shortcut, dest_xy=(0.12, 0.1)):
    # overlay is a chain, but the destination sits next to the origin in space
    pos = [(0.1, 0.1), (0.3, 0.5), (0.5, 0.9), (0.7, 0.5), (0.9, 0.9), dest_xy]
    return Scenario(
        TopologySpec(6, Placement.EXPLICIT, 0.2, tuple(pos)),
        params=ProtocolParams(K=5, shortcut=shortcut),
        workload=[Injection(0, 0, 5), Injection(100, 0, 5)],
        table_mode=TableMode.CHAIN,
    )


def test_shortcut_skips_relays_on_second_chunk():
    on, _ = run(_shortcut_scenario(True))
    off, _ = run(_shortcut_scenario(False))
    assert all(on.delivered.values()) and all(off.delivered.values())
    second = [r for r in on.log if r.slot >= 100]
    assert [(r.kind, r.src, r.dst) for r in second] == [("DATA", 0, 5), ("ACK", 5, 0)]
    assert off.data_msgs - on.data_msgs == 4


def test_no_shortcut_when_acker_out_of_range():
    on, _ = run(_shortcut_scenario(True, dest_xy=(0.9, 0.1)))
    off, _ = run(_shortcut_scenario(False, dest_xy=(0.9, 0.1)))
    assert [r.csv_line() for r in on.log] == [r.csv_line() for r in off.log]


def _median_origin_k(rate):
    wl = [Injection(200 * i, 0, 10) for i in range(1000)]
    sc = line(10, params=ProtocolParams(K=4, adaptive=True, k_max=10),
              faults=FaultSpec(link_loss_rate=rate), workload=wl, max_slots=10**7)
    rep, _ = run(sc, 5)
    return statistics.median(k for _, n, k in rep.k_trace if n == 0)


def test_adaptive_k_backs_off_under_loss():
    assert _median_origin_k(0.3) < _median_origin_k(0.0)


def test_hop_cap_bounds_forwarding():
    sc = line(10, params=ProtocolParams(K=4, hop_cap=6))
    rep, log = run(sc)
    assert not rep.delivered[0]
    assert max(r.hop_count for r in sends(log, "DATA")) <= 6
    assert any(why == "hop-cap" for _, _, why in rep.failures)


def test_duplicate_data_is_dropped():
    # lost ack forces a retry of the same chunk; relays do not relay the retry twice per attempt
    sc = line(4, params=ProtocolParams(K=2, c_t=3.0), faults=FaultSpec(drop_once=frozenset({(2, 0)})))
    rep, log = run(sc)
    assert rep.delivered[0]
    attempts = [(r.src, r.dst) for r in sends(log, "DATA")]
    assert len(attempts) == len(set(attempts)) + 2   # 0->1 and 1->2 resent once
    assert [n for _, n, _ in rep.k_trace].count(2) == 1
    assert math.isclose(rep.delivery_rate, 1.0)
