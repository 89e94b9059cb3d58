"""Per-node dissemination state machine with delayed K-hop acknowledgements.

A source caches a chunk and sends it with a countdown ``K``. Each relay
decrements the countdown; the node where it reaches zero acknowledges the
source directly, takes custody of the chunk and becomes the next source.
A source that hears nothing retries once with a longer timer, then probes
with a halved countdown to find out whether its first hop is dead, and
finally drops that candidate and moves on through its routing table.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING

from .membership import RoutingTable
from .net_model import EnergyState, Locator, NodeId

if TYPE_CHECKING:
    from .sim_engine import Simulator

HEADER_BYTES = 16
ENTRY_BYTES = 8
DEFAULT_PAYLOAD = 48
TIMER_GROWTH = 1.5
MEMBER_WAIT = 3


class MsgKind(str, Enum):
    DATA = "DATA"
    ACK = "ACK"
    MEMBER_REQ = "MEMBER_REQ"
    MEMBER_RESP = "MEMBER_RESP"


class AckRole(str, Enum):
    CUSTODY = "custody"      # K exhausted here; sender is now the source
    DELIVERY = "delivery"    # sent by the final destination
    ENERGY = "energy"        # weak node reporting its level, no custody
    CONFIRM = "confirm"      # delegate -> weak node


class RoutingFailure(Exception):
    """Base class for per-chunk routing failures (recorded, not raised, by the simulator)."""

    reason = "failure"


class RoutingExhausted(RoutingFailure):
    reason = "exhausted"


class EnergyRefusal(RoutingFailure):
    reason = "energy"


class HopCapExceeded(RoutingFailure):
    reason = "hop-cap"


@dataclass(frozen=True)
class DataChunk:
    chunk_id: int
    origin: NodeId
    final_dest: NodeId
    payload_size: int = DEFAULT_PAYLOAD


@dataclass(frozen=True)
class Message:
    kind: MsgKind
    chunk: DataChunk | None = None
    current_source: NodeId | None = None
    k_remaining: int = 0
    hop_count: int = 0
    # (source, per-source sequence number) of the transmission attempt
    attempt: tuple[NodeId, int] | None = None
    # handoff digest: every node that has been a source for this chunk on this branch
    prior_sources: frozenset[NodeId] = frozenset()
    delegated_by: NodeId | None = None
    responder: NodeId | None = None
    responder_locator: Locator | None = None
    energy_report: float | None = None
    ack_role: AckRole | None = None
    entries: tuple[tuple[NodeId, Locator | None], ...] = ()

    @property
    def size_bytes(self) -> int:
        if self.kind is MsgKind.DATA:
            return HEADER_BYTES + self.chunk.payload_size
        if self.kind is MsgKind.MEMBER_RESP:
            return HEADER_BYTES + ENTRY_BYTES * len(self.entries)
        return HEADER_BYTES

    @property
    def role(self) -> str:
        return self.ack_role.value if self.ack_role is not None else ""


@dataclass
class ProtocolParams:
    K: int = 4
    I: int = 4
    c_t: float = 3.0
    t_max: int = 1000
    adaptive: bool = False
    k_max: int = 10
    localize: bool = True
    shortcut: bool = False
    prefer_destination: bool = True
    hop_cap: int | None = None
    refresh: bool = False
    refresh_period: int = 50
    dedup_capacity: int = 256

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.I < 1:
            raise ValueError("I must be >= 1")
        if self.c_t <= 0:
            raise ValueError("c_t must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.refresh_period < 1:
            raise ValueError("refresh_period must be >= 1")


def base_timer(k: int, c_t: float) -> int:
    """Ack wait for a countdown of ``k``: grows linearly with the number of hops."""
    return max(1, math.ceil(c_t * k - 1e-9))


def adapt_timer(timer: int, t_max: int) -> int:
    """Enlarged wait used for the single same-candidate retry (10 -> 15)."""
    return min(math.ceil(timer * TIMER_GROWTH - 1e-9), t_max)


def adapt_k(k: int, outcome: str, k_max: int) -> int:
    """Additive increase on success, halving when the timer retry ran out."""
    if outcome == "success":
        return min(k + 1, k_max)
    if outcome == "exhausted":
        return max(math.ceil(k / 2), 1)
    raise ValueError(f"unknown outcome {outcome!r}")


def probe_schedule(k: int) -> list[int]:
    """Countdowns tried against one candidate after the retry: K/2, K/4, ... 1 (ceil)."""
    out = []
    while k > 1:
        k = math.ceil(k / 2)
        out.append(k)
    return out


class Phase(str, Enum):
    INITIAL = "initial"
    RETRY = "retry"
    PROBE = "probe"


@dataclass
class Pending:
    """Source-side bookkeeping for one cached chunk."""

    chunk: DataChunk
    k: int
    base_hops: int
    prior: frozenset[NodeId]
    tried: set[NodeId] = field(default_factory=set)
    candidate: NodeId | None = None
    phase: Phase = Phase.INITIAL
    k_attempt: int = 0
    timer: int = 0
    token: int = -1
    shortcut: bool = False
    direct_ok: bool = False


class Node:
    def __init__(self, node_id: NodeId, locator: Locator, table: RoutingTable,
                 energy: EnergyState, params: ProtocolParams, corrupt: bool = False):
        self.id = node_id
        self.locator = locator
        self.table = table
        self.energy = energy
        self.params = params
        self.corrupt = corrupt
        self.k_current = params.K
        self.cache: dict[int, DataChunk] = {}
        self.pending: dict[int, Pending] = {}
        self.custody_from: dict[int, NodeId | None] = {}
        self.seen: OrderedDict = OrderedDict()
        self.known_locators: dict[NodeId, Locator] = {}
        self.last_acker: dict[NodeId, NodeId] = {}
        self.energy_reports: dict[NodeId, float] = {}
        self._seq = 0
        self._member_wait: dict[NodeId, int] = {}

    def __repr__(self):
        return f"Node({self.id}, table={self.table.entries}, cache={sorted(self.cache)})"

    # ---- source side -------------------------------------------------

    def start_routing(self, sim: Simulator, chunk: DataChunk) -> None:
        if chunk.final_dest == self.id:
            sim.record_delivery(chunk, self.id)
            return
        if self.energy.refusing:
            sim.record_failure(chunk, self.id, EnergyRefusal.reason)
            return
        direct = not self.table.entries and sim.topology.in_range(self.id, chunk.final_dest)
        if not self.table.entries and not direct:
            sim.record_failure(chunk, self.id, RoutingExhausted.reason)
            return
        self.custody_from[chunk.chunk_id] = None
        self.route_message(sim, chunk, base_hops=0, prior=frozenset(), direct_ok=direct)

    def route_message(self, sim: Simulator, chunk: DataChunk, base_hops: int,
                      prior: frozenset[NodeId], direct_ok: bool = False) -> None:
        k = self.k_current if self.params.adaptive else self.params.K
        sim.k_trace.append((sim.now, self.id, k))
        self.cache[chunk.chunk_id] = chunk
        p = Pending(chunk=chunk, k=k, base_hops=base_hops, prior=prior | {self.id}, direct_ok=direct_ok)
        self.pending[chunk.chunk_id] = p
        self._try_next(sim, p)

    def _next_candidate(self, sim: Simulator, p: Pending) -> NodeId | None:
        excluded = p.tried | p.prior
        q = p.chunk.final_dest
        p.shortcut = False
        if self.params.shortcut:
            for target in (q, self.last_acker.get(q)):
                if target is None or target in excluded or target in self.table:
                    continue
                loc = self.known_locators.get(target)
                if loc is not None and self.locator.distance(loc) <= sim.topology.radio_range:
                    p.shortcut = True
                    return target
        if self.params.prefer_destination and q in self.table and q not in excluded:
            return q
        for e in self.table:
            if e not in excluded:
                return e
        # an origin that knows nobody may still hear the destination directly
        if p.direct_ok and q not in excluded:
            return q
        return None

    def _try_next(self, sim: Simulator, p: Pending) -> None:
        c = self._next_candidate(sim, p)
        if c is None:
            self._give_up(sim, p, RoutingExhausted.reason)
            return
        p.candidate = c
        p.phase = Phase.INITIAL
        p.k_attempt = p.k
        p.timer = base_timer(p.k, self.params.c_t)
        self._send_attempt(sim, p)

    def _send_attempt(self, sim: Simulator, p: Pending) -> None:
        if not self.energy.can_transmit():
            # chunk stays cached; the failure is reported
            self.pending.pop(p.chunk.chunk_id, None)
            sim.record_failure(p.chunk, self.id, EnergyRefusal.reason)
            return
        if p.base_hops + 1 > sim.hop_cap:
            self._give_up(sim, p, HopCapExceeded.reason)
            return
        self._seq += 1
        p.token = self._seq
        msg = Message(
            MsgKind.DATA,
            chunk=p.chunk,
            current_source=self.id,
            k_remaining=p.k_attempt,
            hop_count=p.base_hops + 1,
            attempt=(self.id, self._seq),
            prior_sources=p.prior,
        )
        sim.send(self.id, p.candidate, msg)
        sim.start_timer(self.id, p.timer + 1, (p.chunk.chunk_id, self._seq))

    def _give_up(self, sim: Simulator, p: Pending, reason: str) -> None:
        self.pending.pop(p.chunk.chunk_id, None)
        self.cache.pop(p.chunk.chunk_id, None)
        sim.record_failure(p.chunk, self.id, reason)

    def on_timer(self, sim: Simulator, key) -> None:
        if key[0] == "member":
            self._member_timeout(sim, key[1], key[2])
            return
        cid, token = key
        p = self.pending.get(cid)
        if p is None or p.token != token:
            return
        if p.shortcut:
            self.known_locators.pop(p.candidate, None)
            p.tried.add(p.candidate)
            self._try_next(sim, p)
            return
        if p.phase is Phase.INITIAL:
            p.phase = Phase.RETRY
            p.timer = adapt_timer(p.timer, self.params.t_max)
            sim.retries += 1
            self._send_attempt(sim, p)
            return
        if p.phase is Phase.RETRY and self.params.adaptive:
            self.k_current = adapt_k(self.k_current, "exhausted", self.params.k_max)
        if self.params.localize and p.k_attempt > 1:
            p.phase = Phase.PROBE
            p.k_attempt = math.ceil(p.k_attempt / 2)
            p.timer = base_timer(p.k_attempt, self.params.c_t)
            sim.retries += 1
            self._send_attempt(sim, p)
            return
        # the first hop never answered, even at K=1: it is the culprit
        if self.table.remove(p.candidate):
            sim.removed_members += 1
        p.tried.add(p.candidate)
        self._try_next(sim, p)

    def on_ack(self, sim: Simulator, msg: Message) -> None:
        if msg.responder_locator is not None:
            self.known_locators[msg.responder] = msg.responder_locator
        if msg.ack_role is AckRole.ENERGY:
            self.energy_reports[msg.responder] = msg.energy_report
            return
        if msg.ack_role is AckRole.CONFIRM:
            return
        cid = msg.chunk.chunk_id
        p = self.pending.get(cid)
        if p is None or msg.current_source != self.id:
            return
        # any custody/delivery ack for this chunk ends the wait, including a
        # late one from an attempt that already timed out
        del self.pending[cid]
        self.cache.pop(cid, None)
        self.last_acker[msg.chunk.final_dest] = msg.responder
        if self.params.adaptive:
            self.k_current = adapt_k(self.k_current, "success", self.params.k_max)

    # ---- relay side --------------------------------------------------

    def on_data(self, sim: Simulator, msg: Message, sender: NodeId) -> None:
        if self.corrupt:
            return
        key = (msg.chunk.chunk_id, msg.attempt)
        if key in self.seen:
            return
        self.seen[key] = None
        if len(self.seen) > self.params.dedup_capacity:
            self.seen.popitem(last=False)

        chunk = msg.chunk
        if chunk.final_dest == self.id:
            sim.record_delivery(chunk, self.id)
            self._ack(sim, msg.current_source, chunk, msg, AckRole.DELIVERY)
            if msg.delegated_by is not None:
                self._ack(sim, msg.delegated_by, chunk, msg, AckRole.CONFIRM)
            return
        if self.energy.weak:
            self.delegate(sim, msg, sender)
            return
        k = msg.k_remaining - 1
        if k > 0:
            nxt = self._pick_forward(sim, msg, sender)
            if nxt is not None:
                self._forward(sim, msg, nxt, k)
                return
        self._handoff(sim, msg, sender)

    def _pick_forward(self, sim: Simulator, msg: Message, sender: NodeId) -> NodeId | None:
        q = msg.chunk.final_dest
        if self.params.prefer_destination and q in self.table:
            return q
        options = [e for e in self.table if e != sender and e not in msg.prior_sources]
        if not options:
            return None
        return sim.rng.choice(options)

    def _forward(self, sim: Simulator, msg: Message, nxt: NodeId, k: int) -> None:
        if msg.hop_count + 1 > sim.hop_cap:
            return
        sim.send(self.id, nxt, replace(msg, k_remaining=k, hop_count=msg.hop_count + 1,
                                       delegated_by=None))

    def _handoff(self, sim: Simulator, msg: Message, sender: NodeId) -> None:
        u = msg.current_source
        cid = msg.chunk.chunk_id
        previous = self.custody_from.get(cid, False)
        if self.id in msg.prior_sources or (previous is not False and previous != u):
            # never become a source twice on one chunk; push one hop further
            nxt = self._pick_forward(sim, msg, sender)
            if nxt is not None:
                self._forward(sim, msg, nxt, 1)
            return
        self._ack(sim, u, msg.chunk, msg, AckRole.CUSTODY)
        if msg.delegated_by is not None:
            self._ack(sim, msg.delegated_by, msg.chunk, msg, AckRole.CONFIRM)
        if previous is not False:
            # duplicate of an attempt we already took over: re-ack only
            return
        self.custody_from[cid] = u
        self.route_message(sim, msg.chunk, base_hops=msg.hop_count, prior=msg.prior_sources)

    def delegate(self, sim: Simulator, msg: Message, sender: NodeId) -> None:
        """Low-energy relay: pass the chunk one hop with K=1 and report energy to the source."""
        u = msg.current_source
        q = msg.chunk.final_dest
        nbrs = sim.topology.neighbours[self.id] - msg.prior_sources - {sender, self.id}
        target = None
        if q in nbrs:
            target = q
        else:
            in_table = [e for e in self.table if e in nbrs]
            if in_table:
                target = in_table[0]
            elif nbrs:
                target = sim.rng.choice(sorted(nbrs))
        if target is not None and msg.hop_count + 1 <= sim.hop_cap:
            sim.send(self.id, target, replace(msg, k_remaining=1, hop_count=msg.hop_count + 1,
                                              delegated_by=self.id))
        sim.send(self.id, u, Message(
            MsgKind.ACK,
            chunk=msg.chunk,
            current_source=u,
            responder=self.id,
            responder_locator=self.locator,
            energy_report=self.energy.level,
            ack_role=AckRole.ENERGY,
        ))

    def _ack(self, sim: Simulator, to: NodeId, chunk: DataChunk, msg: Message, role: AckRole) -> None:
        sim.send(self.id, to, Message(
            MsgKind.ACK,
            chunk=chunk,
            current_source=msg.current_source,
            responder=self.id,
            responder_locator=self.locator,
            ack_role=role,
        ))

    # ---- membership --------------------------------------------------

    def refresh_tick(self, sim: Simulator) -> None:
        if not self.table.entries or self.corrupt or self.energy.refusing:
            return
        tmp = sim.rng.choice(self.table.entries)
        self._seq += 1
        self._member_wait[tmp] = self._seq
        sim.send(self.id, tmp, Message(MsgKind.MEMBER_REQ, responder=self.id,
                                       responder_locator=self.locator))
        sim.start_timer(self.id, MEMBER_WAIT, ("member", tmp, self._seq), work=False)

    def on_member_req(self, sim: Simulator, msg: Message, sender: NodeId) -> None:
        if self.corrupt:
            return
        self.table.merge([(sender, msg.responder_locator)], sim.rng, sim.now)
        entries = tuple(self.table.offer(self.params.I, exclude=sender))
        sim.send(self.id, sender, Message(MsgKind.MEMBER_RESP, responder=self.id,
                                          responder_locator=self.locator, entries=entries))

    def on_member_resp(self, sim: Simulator, msg: Message, sender: NodeId) -> None:
        self._member_wait.pop(sender, None)
        self.table.merge(msg.entries, sim.rng, sim.now)

    def _member_timeout(self, sim: Simulator, peer: NodeId, token: int) -> None:
        if self._member_wait.get(peer) != token:
            return
        del self._member_wait[peer]
        if self.table.remove(peer):
            sim.removed_members += 1
