"""Sensor field model: placement, radio range, energy, faults and the slotted medium."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .protocol import Message

NodeId = int


class Placement(str, Enum):
    GRID = "grid"
    RANDOM = "uniform-random"
    LINE = "line"
    EXPLICIT = "explicit"


class Outcome(str, Enum):
    DELIVERED = "delivered"
    LOST = "lost"
    REFUSED = "refused"
    COLLIDED = "collided"


@dataclass(frozen=True)
class Locator:
    x: float
    y: float

    def __post_init__(self):
        for v in (self.x, self.y):
            if not math.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ValueError(f"locator coordinate {v!r} outside the unit square")

    def distance(self, other: Locator) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class TopologySpec:
    """Parameters from which a :class:`Topology` is generated."""

    n_nodes: int
    placement: Placement = Placement.LINE
    radio_range: float = 0.25
    positions: tuple[tuple[float, float], ...] | None = None


@dataclass
class Topology:
    locators: list[Locator]
    radio_range: float
    placement: Placement
    neighbours: list[frozenset[NodeId]] = field(default_factory=list)

    def __post_init__(self):
        if not self.neighbours:
            self.neighbours = _neighbour_sets(self.locators, self.radio_range)

    @property
    def n_nodes(self) -> int:
        return len(self.locators)

    def in_range(self, a: NodeId, b: NodeId, radius: float | None = None) -> bool:
        r = self.radio_range if radius is None else radius
        return self.locators[a].distance(self.locators[b]) <= r

    def distance(self, a: NodeId, b: NodeId) -> float:
        return self.locators[a].distance(self.locators[b])


def _neighbour_sets(locators: list[Locator], radio_range: float) -> list[frozenset[NodeId]]:
    pts = np.array([(p.x, p.y) for p in locators], dtype=float)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    adj = d <= radio_range
    np.fill_diagonal(adj, False)
    return [frozenset(np.flatnonzero(row).tolist()) for row in adj]


def build_topology(spec: TopologySpec, rng: random.Random | int | None = None) -> Topology:
    """Place ``spec.n_nodes`` nodes in the unit square.

    Line placement ignores the requested radio range and sets it to 1.5x the
    node spacing so every node hears exactly its predecessor and successor.
    """
    n = spec.n_nodes
    if n < 2:
        raise ValueError("a topology needs at least 2 nodes")
    if not spec.radio_range > 0:
        raise ValueError("radio_range must be positive")
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)

    placement = Placement(spec.placement)
    radio_range = spec.radio_range
    if placement is Placement.LINE:
        spacing = 1.0 / (n - 1)
        locs = [Locator(min(i * spacing, 1.0), 0.5) for i in range(n)]
        radio_range = 1.5 * spacing
    elif placement is Placement.GRID:
        side = math.ceil(math.sqrt(n))
        step = 1.0 / max(side - 1, 1)
        locs = [Locator((i % side) * step, (i // side) * step) for i in range(n)]
    elif placement is Placement.RANDOM:
        locs = [Locator(rng.random(), rng.random()) for _ in range(n)]
    else:
        if spec.positions is None or len(spec.positions) != n:
            raise ValueError("explicit placement needs one position per node")
        locs = [Locator(float(x), float(y)) for x, y in spec.positions]
    return Topology(locators=locs, radio_range=radio_range, placement=placement)


@dataclass
class EnergyState:
    level: float = 10_000.0
    theta_refuse: float = 10.0
    theta_delegate: float = 100.0
    tx_cost: float = 2.0
    rx_cost: float = 1.0

    def __post_init__(self):
        if not 0 <= self.theta_refuse < self.theta_delegate:
            raise ValueError("need 0 <= theta_refuse < theta_delegate")
        if self.level < 0:
            raise ValueError("energy level must be non-negative")

    def can_transmit(self) -> bool:
        return self.level >= self.tx_cost and self.level >= self.theta_refuse

    @property
    def refusing(self) -> bool:
        return self.level < self.theta_refuse

    @property
    def weak(self) -> bool:
        return self.theta_refuse <= self.level < self.theta_delegate

    def debit(self, amount: float) -> None:
        self.level = max(0.0, self.level - amount)


@dataclass(frozen=True)
class FaultSpec:
    """Injected faults for one run.

    ``slow_nodes`` maps a node to extra slots it holds a DATA message before
    acting on it; ``drop_once`` lists directed links whose first transmission
    is lost. Both exist to build exact hand-traceable fault scenarios.
    """

    link_loss_rate: float = 0.0
    corrupt_nodes: frozenset[NodeId] = frozenset()
    crashed_nodes: frozenset[NodeId] = frozenset()
    slow_nodes: tuple[tuple[NodeId, int], ...] = ()
    drop_once: frozenset[tuple[NodeId, NodeId]] = frozenset()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.link_loss_rate <= 1.0:
            raise ValueError("link_loss_rate must be in [0, 1]")
        if self.corrupt_nodes & self.crashed_nodes:
            raise ValueError("a node cannot be both corrupt and crashed")

    @property
    def is_null(self) -> bool:
        return (
            self.link_loss_rate == 0.0
            and not self.corrupt_nodes
            and not self.crashed_nodes
            and not self.slow_nodes
            and not self.drop_once
        )

    def nulled(self) -> FaultSpec:
        return FaultSpec(seed=self.seed)

    def check_endpoints(self, *nodes: NodeId) -> None:
        bad = (self.corrupt_nodes | self.crashed_nodes).intersection(nodes)
        if bad:
            raise ValueError(f"source/destination nodes {sorted(bad)} cannot be faulty")


@dataclass
class TxRecord:
    """One transmission attempt; serialises to the transmission-log CSV line."""

    slot: int
    kind: str
    src: NodeId
    dst: NodeId
    chunk_id: int | None
    k_remaining: int | None
    bytes: int
    outcome: Outcome
    role: str = ""
    hop_count: int = 0

    CSV_HEADER = "slot,kind,from,to,chunk_id,k_remaining,bytes,outcome"

    def csv_line(self) -> str:
        cid = "" if self.chunk_id is None else str(self.chunk_id)
        k = "" if self.k_remaining is None else str(self.k_remaining)
        return f"{self.slot},{self.kind},{self.src},{self.dst},{cid},{k},{self.bytes},{self.outcome.value}"


class Medium:
    """Slotted, collision-free (TDMA) channel by default.

    ``transmit`` decides the fate of one attempt and returns the slot at which
    the receiver should process it (or ``None``). Scheduling the arrival is
    the caller's job.
    """

    def __init__(self, topology: Topology, energy: list[EnergyState], faults: FaultSpec,
                 rng: random.Random, ack_range: float | None = None, collisions: bool = False):
        self.topology = topology
        self.energy = energy
        self.faults = faults
        self.rng = rng
        self.ack_range = ack_range
        self.collisions = collisions
        self.log: list[TxRecord] = []
        self._slow = dict(faults.slow_nodes)
        self._drops_pending = set(faults.drop_once)
        # (receiver, arrival slot) -> log indices, for collision mode
        self._arrivals: dict[tuple[NodeId, int], list[int]] = {}

    def transmit(self, src: NodeId, dst: NodeId, msg: Message, slot: int) -> tuple[Outcome, int | None]:
        from .protocol import MsgKind

        rec = TxRecord(
            slot=slot,
            kind=msg.kind.value,
            src=src,
            dst=dst,
            chunk_id=msg.chunk.chunk_id if msg.chunk is not None else None,
            k_remaining=msg.k_remaining if msg.kind is MsgKind.DATA else None,
            bytes=msg.size_bytes,
            outcome=Outcome.DELIVERED,
            role=msg.role,
            hop_count=msg.hop_count,
        )
        sender = self.energy[src]
        if src in self.faults.crashed_nodes or not sender.can_transmit():
            rec.outcome = Outcome.REFUSED
            rec.bytes = 0
            self.log.append(rec)
            return rec.outcome, None

        sender.debit(sender.tx_cost)
        # one draw per attempt keeps the fault stream aligned across loss rates
        lost = self.rng.random() < self.faults.link_loss_rate
        if (src, dst) in self._drops_pending:
            self._drops_pending.discard((src, dst))
            lost = True
        if dst in self.faults.crashed_nodes:
            lost = True
        if msg.kind is MsgKind.ACK and self.ack_range is not None:
            if not self.topology.in_range(src, dst, self.ack_range):
                lost = True
        if lost:
            rec.outcome = Outcome.LOST
            self.log.append(rec)
            return rec.outcome, None

        arrival = slot + 1
        if msg.kind is MsgKind.DATA:
            arrival += self._slow.get(dst, 0)
        self.log.append(rec)
        if self.collisions:
            key = (dst, arrival)
            idx = self._arrivals.setdefault(key, [])
            idx.append(len(self.log) - 1)
            if len(idx) > 1:
                for i in idx:
                    self.log[i].outcome = Outcome.COLLIDED
        return rec.outcome, arrival

    def collided(self, dst: NodeId, arrival: int) -> bool:
        return self.collisions and len(self._arrivals.get((dst, arrival), ())) > 1

    def receive(self, dst: NodeId) -> bool:
        """Debit reception energy; a node below its refusal threshold keeps its radio off."""
        e = self.energy[dst]
        if e.refusing:
            return False
        e.debit(e.rx_cost)
        return True
