"""Deterministic slotted discrete-event driver."""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

from .membership import Bootstrap, RoutingTable, node_join, refresh_membership
from .metrics import RunReport
from .net_model import EnergyState, FaultSpec, Medium, NodeId, Topology, TopologySpec, build_topology
from .protocol import DataChunk, Message, MsgKind, Node, ProtocolParams


class EventKind(str, Enum):
    ARRIVAL = "arrival"
    TIMER = "timer_expiry"
    REFRESH = "refresh_tick"
    INJECT = "chunk_injection"


class TableMode(str, Enum):
    CHAIN = "chain"
    NEIGHBOURS = "neighbors"
    RANDOM = "random"
    JOIN = "join"
    EXPLICIT = "explicit"


@dataclass(order=True)
class SimEvent:
    slot: int
    seq: int
    kind: EventKind = field(compare=False)
    target: NodeId = field(compare=False)
    payload: object = field(compare=False, default=None)
    work: bool = field(compare=False, default=True)


@dataclass(frozen=True)
class Injection:
    slot: int
    origin: NodeId
    dest: NodeId
    payload_size: int = 48


@dataclass
class Scenario:
    topology: TopologySpec | Topology
    params: ProtocolParams = field(default_factory=ProtocolParams)
    faults: FaultSpec = field(default_factory=FaultSpec)
    workload: list[Injection] = field(default_factory=list)
    table_mode: TableMode = TableMode.CHAIN
    tables: dict[NodeId, list[NodeId]] | None = None
    energy: EnergyState = field(default_factory=EnergyState)
    energy_levels: dict[NodeId, float] = field(default_factory=dict)
    ack_range: float | None = None
    collisions: bool = False
    bootstrap: NodeId = 0
    join_warmup_rounds: int = 5
    max_slots: int = 100_000

    def __post_init__(self):
        self.table_mode = TableMode(self.table_mode)
        n = self.n_nodes
        for inj in self.workload:
            if inj.slot >= self.max_slots:
                raise ValueError("workload injection slot must be < max_slots")
            if not (0 <= inj.origin < n and 0 <= inj.dest < n):
                raise ValueError(f"workload endpoint out of range: {inj}")
            self.faults.check_endpoints(inj.origin, inj.dest)

    @property
    def n_nodes(self) -> int:
        t = self.topology
        return t.n_nodes

    def with_faults(self, faults: FaultSpec) -> Scenario:
        return replace(self, faults=faults)


def rng_stream(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}:{name}")


def build_tables(scenario: Scenario, topo: Topology, rng: random.Random) -> list[RoutingTable]:
    n = topo.n_nodes
    cap = scenario.params.I
    mode = scenario.table_mode
    tables = [RoutingTable(owner=i, capacity=cap) for i in range(n)]
    if mode is TableMode.CHAIN:
        for i in range(n - 1):
            tables[i].add(i + 1, topo.locators[i + 1])
    elif mode is TableMode.NEIGHBOURS:
        for i in range(n):
            nb = sorted(topo.neighbours[i], key=lambda j: (topo.distance(i, j), j))
            for j in nb[:cap]:
                tables[i].add(j, topo.locators[j])
    elif mode is TableMode.RANDOM:
        for i in range(n):
            others = [j for j in range(n) if j != i]
            for j in rng.sample(others, min(cap, len(others))):
                tables[i].add(j, topo.locators[j])
    elif mode is TableMode.JOIN:
        b = scenario.bootstrap
        boot = Bootstrap(b, topo.locators[b])
        order = [b] + [i for i in range(n) if i != b]
        for i in order:
            tables[i] = node_join(i, boot, cap, rng, locator=topo.locators[i])
        crashed = scenario.faults.crashed_nodes
        by_id = {t.owner: t for t in tables}
        for _ in range(scenario.join_warmup_rounds):
            for i in order:
                refresh_membership(by_id[i], by_id, rng, alive=lambda x: x not in crashed)
    else:
        for i, entries in (scenario.tables or {}).items():
            if len(entries) > cap:
                raise ValueError(f"explicit table for node {i} exceeds capacity I={cap}")
            for j in entries:
                tables[int(i)].add(int(j), topo.locators[int(j)])
    for t in tables:
        if t.identity is None:
            t.identity = (t.owner, topo.locators[t.owner])
    return tables


class Simulator:
    """Owns all mutable state of one run."""

    def __init__(self, scenario: Scenario, seed: int = 0,
                 on_step: Callable[[Simulator, SimEvent], None] | None = None):
        self.scenario = scenario
        self.seed = seed
        self.params = scenario.params
        self.on_step = on_step
        topo_rng = rng_stream(seed, "topology")
        self.fault_rng = rng_stream(seed, f"faults:{scenario.faults.seed}")
        self.rng = rng_stream(seed, "protocol")

        t = scenario.topology
        self.topology = t if isinstance(t, Topology) else build_topology(t, topo_rng)
        n = self.topology.n_nodes
        self.hop_cap = self.params.hop_cap if self.params.hop_cap is not None else 4 * (n - 1)
        tables = build_tables(scenario, self.topology, topo_rng)

        self.energies = []
        for i in range(n):
            e = replace(scenario.energy)
            if i in scenario.energy_levels:
                e.level = float(scenario.energy_levels[i])
            self.energies.append(e)
        self.medium = Medium(self.topology, self.energies, scenario.faults, self.fault_rng,
                             ack_range=scenario.ack_range, collisions=scenario.collisions)
        self.nodes = [
            Node(i, self.topology.locators[i], tables[i], self.energies[i], self.params,
                 corrupt=i in scenario.faults.corrupt_nodes)
            for i in range(n)
        ]

        self.now = 0
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self._work = 0
        self.retries = 0
        self.removed_members = 0
        self.k_trace: list[tuple[int, NodeId, int]] = []
        self.failures: list[tuple[int, NodeId, str]] = []
        self.delivered: dict[int, bool] = {}
        self.delivery_slot: dict[int, int] = {}
        self.inject_slot: dict[int, int] = {}
        self.pairs: dict[int, tuple[NodeId, NodeId]] = {}
        self.truncated = False

    # ---- services used by node handlers -------------------------------

    def schedule(self, slot: int, kind: EventKind, target: NodeId, payload=None, work=True) -> SimEvent:
        ev = SimEvent(slot, next(self._seq), kind, target, payload, work)
        heapq.heappush(self._queue, ev)
        if work:
            self._work += 1
        return ev

    def send(self, src: NodeId, dst: NodeId, msg: Message) -> None:
        _, arrival = self.medium.transmit(src, dst, msg, self.now)
        if arrival is not None:
            work = msg.kind in (MsgKind.DATA, MsgKind.ACK)
            self.schedule(arrival, EventKind.ARRIVAL, dst, (msg, src), work=work)

    def start_timer(self, node: NodeId, delay: int, key, work: bool = True) -> None:
        self.schedule(self.now + delay, EventKind.TIMER, node, key, work=work)

    def record_delivery(self, chunk: DataChunk, node: NodeId) -> None:
        if not self.delivered.get(chunk.chunk_id):
            self.delivered[chunk.chunk_id] = True
            self.delivery_slot[chunk.chunk_id] = self.now

    def record_failure(self, chunk: DataChunk, node: NodeId, reason: str) -> None:
        self.failures.append((chunk.chunk_id, node, reason))

    # ---- main loop ----------------------------------------------------

    def _dispatch(self, ev: SimEvent) -> None:
        node = self.nodes[ev.target]
        if ev.kind is EventKind.ARRIVAL:
            msg, src = ev.payload
            if self.medium.collided(ev.target, ev.slot):
                return
            if not self.medium.receive(ev.target):
                return
            if msg.kind is MsgKind.DATA:
                node.on_data(self, msg, src)
            elif msg.kind is MsgKind.ACK:
                node.on_ack(self, msg)
            elif msg.kind is MsgKind.MEMBER_REQ:
                node.on_member_req(self, msg, src)
            else:
                node.on_member_resp(self, msg, src)
        elif ev.kind is EventKind.TIMER:
            node.on_timer(self, ev.payload)
        elif ev.kind is EventKind.REFRESH:
            node.refresh_tick(self)
            self.schedule(ev.slot + self.params.refresh_period, EventKind.REFRESH, ev.target, work=False)
        else:
            chunk = ev.payload
            self.inject_slot[chunk.chunk_id] = self.now
            node.start_routing(self, chunk)

    def run(self) -> RunReport:
        for cid, inj in enumerate(self.scenario.workload):
            chunk = DataChunk(cid, inj.origin, inj.dest, inj.payload_size)
            self.delivered[cid] = False
            self.pairs[cid] = (inj.origin, inj.dest)
            self.schedule(inj.slot, EventKind.INJECT, inj.origin, chunk)
        if self.params.refresh:
            for i in range(len(self.nodes)):
                if i not in self.scenario.faults.crashed_nodes:
                    self.schedule(self.params.refresh_period, EventKind.REFRESH, i, work=False)

        max_slots = self.scenario.max_slots
        while self._queue and self._work > 0:
            ev = heapq.heappop(self._queue)
            if ev.slot >= max_slots:
                self.truncated = True
                break
            if ev.work:
                self._work -= 1
            self.now = ev.slot
            self._dispatch(ev)
            if self.on_step is not None:
                self.on_step(self, ev)

        return RunReport.from_log(
            self.medium.log,
            delivered=dict(self.delivered),
            pairs=dict(self.pairs),
            inject_slot=dict(self.inject_slot),
            delivery_slot=dict(self.delivery_slot),
            retries=self.retries,
            removed_members=self.removed_members,
            failures=list(self.failures),
            end_slot=self.now,
            truncated=self.truncated,
            k_trace=list(self.k_trace),
        )

    def table_snapshot(self) -> dict[NodeId, list[NodeId]]:
        return {n.id: list(n.table.entries) for n in self.nodes}


def run(scenario: Scenario, seed: int = 0, on_step=None) -> tuple[RunReport, list]:
    rep = Simulator(scenario, seed, on_step=on_step).run()
    return rep, rep.log


def paired_run(scenario: Scenario, seed: int = 0) -> tuple[RunReport, RunReport]:
    """Same scenario and seed, once with the faults and once with them nulled."""
    faulty, _ = run(scenario, seed)
    if scenario.faults.is_null:
        clean, _ = run(scenario, seed)
    else:
        clean, _ = run(scenario.with_faults(scenario.faults.nulled()), seed)
    return faulty, clean


def write_log(log, path) -> None:
    from .net_model import TxRecord

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TxRecord.CSV_HEADER + "\n")
        for rec in log:
            fh.write(rec.csv_line() + "\n")
