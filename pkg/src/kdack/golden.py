"""Canned replays of the four narrative scenarios, with checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .metrics import RunReport
from .net_model import EnergyState, FaultSpec, Outcome, TopologySpec
from .protocol import ProtocolParams, probe_schedule
from .sim_engine import Injection, Scenario, Simulator, TableMode

# c_t = 2.5 makes the K=4 wait exactly 10 slots (1 slot == 1 second)
GOLDEN_CT = 2.5


@dataclass
class Golden:
    name: str
    scenario: Scenario
    names: list[str]
    checks: Callable[[Golden, RunReport, Simulator], list[tuple[str, bool]]]
    baseline: Scenario | None = None
    extra: dict = field(default_factory=dict)

    def nid(self, label: str) -> int:
        return self.names.index(label)


def _sends(log, kind, src, dst, **kw):
    out = []
    for r in log:
        if r.kind != kind or r.src != src or r.dst != dst:
            continue
        if any(getattr(r, a) != v for a, v in kw.items()):
            continue
        out.append(r)
    return out


def _chain(names, **kw) -> Scenario:
    n = len(names)
    params = kw.pop("params", ProtocolParams(K=4, c_t=GOLDEN_CT))
    return Scenario(TopologySpec(n), params=params, workload=[Injection(0, 0, n - 1)], **kw)


def s3_walkthrough() -> Golden:
    names = ["A", "E", "D", "H", "I", "J", "L", "M", "Q"]

    def checks(g, rep, sim):
        A, E, D, H, I, J, Q = (g.nid(x) for x in "AEDHIJQ")
        log = rep.log
        acks = _sends(log, "ACK", I, A, role="custody")
        return [
            ("A sends the chunk to E with K=4", bool(_sends(log, "DATA", A, E, k_remaining=4, slot=0))),
            ("E, D, H relay with K=3, 2, 1", all((
                _sends(log, "DATA", E, D, k_remaining=3),
                _sends(log, "DATA", D, H, k_remaining=2),
                _sends(log, "DATA", H, I, k_remaining=1)))),
            ("I (4th hop) acks A at slot 4, inside the 10-slot wait",
             len(acks) == 1 and acks[0].slot == 4 and acks[0].slot + 1 <= 10),
            ("I has become the source node", (4, I, 4) in rep.k_trace
             and bool(_sends(log, "DATA", I, J, k_remaining=4, slot=4))),
            ("A retried nothing", rep.retries == 0),
            ("Q receives the chunk and acks I", rep.delivered[0] and rep.delivery_slot[0] == 8
             and bool(_sends(log, "ACK", Q, I, role="delivery"))),
        ]

    return Golden("s3_walkthrough", _chain(names), names, checks)


def fig2_timer() -> Golden:
    names = ["A", "E", "D", "H", "I", "J", "L", "M", "Q"]
    # D sits on the chunk for 7 extra slots: round trip A..I..A = 12 slots, in (10, 15]
    sc = _chain(names, faults=FaultSpec(slow_nodes=((2, 7),)))

    def checks(g, rep, sim):
        A, E, I = g.nid("A"), g.nid("E"), g.nid("I")
        first = _sends(rep.log, "DATA", A, E)
        ack = _sends(rep.log, "ACK", I, A, role="custody")
        return [
            ("first wait of 10 slots expires; A resends to E at slot 11",
             [r.slot for r in first] == [0, 11] and all(r.k_remaining == 4 for r in first)),
            ("enlarged wait is 15 slots and the ack lands inside it",
             bool(ack) and 11 < ack[0].slot + 1 <= 11 + 15),
            ("no probes with reduced K", all(r.k_remaining == 4 for r in first)),
            ("E retained in A's routing table", E in sim.nodes[A].table),
            ("chunk delivered", rep.delivered[0]),
        ]

    return Golden("fig2_timer", sc, names, checks)


def fig3_delegation() -> Golden:
    names = ["A", "I", "K", "D", "H", "M", "N", "P", "Q"]
    sc = _chain(names, energy_levels={1: 50.0})
    base = _chain(names)

    def checks(g, rep, sim):
        A, I, K = g.nid("A"), g.nid("I"), g.nid("K")
        base_rep = Simulator(g.baseline, 0).run()
        e = EnergyState()
        energy_ack = _sends(rep.log, "ACK", I, A, role="energy")
        return [
            ("I is weak (between refusal and delegation thresholds)",
             e.theta_refuse <= 50.0 < e.theta_delegate),
            ("I passes the chunk to K with K=1", bool(_sends(rep.log, "DATA", I, K, k_remaining=1))),
            ("I acks A reporting its energy level", len(energy_ack) == 1),
            ("K acks A", len(_sends(rep.log, "ACK", K, A, role="custody")) == 1),
            ("K confirms to I", len(_sends(rep.log, "ACK", K, I, role="confirm")) == 1),
            ("K has become the source node", any(n == K for _, n, _ in rep.k_trace)),
            ("same DATA count as the healthy run", rep.data_msgs == base_rep.data_msgs),
            ("exactly three extra ACKs versus the healthy run", rep.ack_msgs - base_rep.ack_msgs == 3),
            ("chunk delivered", rep.delivered[0]),
        ]

    return Golden("fig3_delegation", sc, names, checks, baseline=base)


def fig4_corrupt() -> Golden:
    names = ["A", "E", "D", "H", "I", "Q", "B", "C"]
    tables = {0: [1, 6], 1: [2], 2: [3], 3: [4], 4: [5], 6: [7], 7: [5]}
    sc = Scenario(
        TopologySpec(len(names)),
        params=ProtocolParams(K=4, c_t=GOLDEN_CT),
        faults=FaultSpec(corrupt_nodes=frozenset({1})),
        workload=[Injection(0, 0, 5)],
        table_mode=TableMode.EXPLICIT,
        tables=tables,
    )

    def checks(g, rep, sim):
        A, E, B, Q = (g.nid(x) for x in "AEBQ")
        to_e = _sends(rep.log, "DATA", A, E)
        ks = [r.k_remaining for r in to_e]
        return [
            ("A tries E at K=4, retries, then probes at K=2 and K=1",
             ks == [4, 4] + probe_schedule(4) and ks == [4, 4, 2, 1]),
            ("every probe times out", not _sends(rep.log, "ACK", E, A)),
            ("E is declared corrupt and removed from A's table", E not in sim.nodes[A].table),
            ("A reroutes through B", bool(_sends(rep.log, "DATA", A, B, k_remaining=4))),
            ("chunk delivered to Q", rep.delivered[0]),
            ("all DATA to E was received, none answered",
             all(r.outcome is Outcome.DELIVERED for r in to_e)),
        ]

    return Golden("fig4_corrupt", sc, names, checks)


GOLDENS = {
    "s3_walkthrough": s3_walkthrough,
    "fig2_timer": fig2_timer,
    "fig3_delegation": fig3_delegation,
    "fig4_corrupt": fig4_corrupt,
}


def replay_golden(name: str) -> tuple[bool, list[str], list[tuple[str, bool]]]:
    """Run a canned scenario; returns (all checkpoints passed, trace lines, checkpoints)."""
    if name not in GOLDENS:
        raise KeyError(f"unknown golden scenario {name!r}; choose from {sorted(GOLDENS)}")
    g = GOLDENS[name]()
    sim = Simulator(g.scenario, 0)
    rep = sim.run()
    lines = []
    for r in rep.log:
        k = f" K={r.k_remaining}" if r.k_remaining is not None else ""
        role = f" [{r.role}]" if r.role else ""
        lines.append(f"slot {r.slot:>3}  {r.kind:<4} {g.names[r.src]} -> {g.names[r.dst]}{k}{role}  {r.outcome.value}")
    for slot, node, k in rep.k_trace:
        lines.append(f"slot {slot:>3}  {g.names[node]} is source (K={k})")
    lines.sort(key=lambda s: int(s.split()[1]))
    checks = g.checks(g, rep, sim)
    return all(ok for _, ok in checks), lines, checks
