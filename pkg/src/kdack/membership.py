"""Bounded routing tables, bootstrap join and gossip refresh."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable

from .net_model import Locator, NodeId


class JoinError(RuntimeError):
    """The bootstrap could not be reached; the join may be retried later."""


@dataclass
class RoutingTable:
    """The list T_p of at most ``capacity`` peers known to ``owner``.

    ``identity`` holds the owner's own (id, locator) tuple. It is recorded
    when the node joins but never offered as a forwarding candidate.
    """

    owner: NodeId
    capacity: int
    entries: list[NodeId] = field(default_factory=list)
    locators: dict[NodeId, Locator] = field(default_factory=dict)
    freshness: dict[NodeId, int] = field(default_factory=dict)
    identity: tuple[NodeId, Locator] | None = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("routing table capacity must be >= 1")
        seen = []
        for e in self.entries:
            if e != self.owner and e not in seen:
                seen.append(e)
        if len(seen) > self.capacity:
            raise ValueError(f"{len(seen)} entries exceed capacity {self.capacity}")
        self.entries = seen

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, node: NodeId) -> bool:
        return node in self.entries

    def __iter__(self):
        return iter(self.entries)

    def add(self, node: NodeId, locator: Locator | None = None, now: int = 0) -> bool:
        """Insert ``node`` if there is room. Returns True when the table changed."""
        if node == self.owner:
            return False
        if node in self.entries:
            self.freshness[node] = now
            if locator is not None:
                self.locators[node] = locator
            return False
        if len(self.entries) >= self.capacity:
            return False
        self.entries.append(node)
        self.freshness[node] = now
        if locator is not None:
            self.locators[node] = locator
        return True

    def remove(self, node: NodeId) -> bool:
        if node not in self.entries:
            return False
        self.entries.remove(node)
        self.freshness.pop(node, None)
        self.locators.pop(node, None)
        return True

    def merge(self, offered: Iterable[tuple[NodeId, Locator | None]], rng: random.Random,
              now: int = 0) -> list[NodeId]:
        """Merge a peer's list, evicting uniformly random *old* entries on overflow.

        Returns the evicted ids.
        """
        old = list(self.entries)
        fresh: list[tuple[NodeId, Locator | None]] = []
        for node, loc in offered:
            if node == self.owner:
                continue
            if node in self.entries:
                self.freshness[node] = now
                if loc is not None:
                    self.locators[node] = loc
            elif node not in (f[0] for f in fresh):
                fresh.append((node, loc))
        if not fresh:
            return []
        fresh = fresh[: self.capacity]
        overflow = len(old) + len(fresh) - self.capacity
        evicted = rng.sample(old, overflow) if overflow > 0 else []
        for node in evicted:
            self.remove(node)
        for node, loc in fresh:
            self.entries.append(node)
            self.freshness[node] = now
            if loc is not None:
                self.locators[node] = loc
        return evicted

    def offer(self, limit: int, exclude: NodeId | None = None) -> list[tuple[NodeId, Locator | None]]:
        return [(e, self.locators.get(e)) for e in self.entries if e != exclude][:limit]


class Bootstrap:
    """Member registry kept by the bootstrap node."""

    def __init__(self, node: NodeId, locator: Locator | None = None, alive: bool = True):
        self.node = node
        self.alive = alive
        self.members: list[tuple[NodeId, Locator | None]] = [(node, locator)]

    def receive_list(self, max_count: int, rng: random.Random,
                     exclude: NodeId | None = None) -> list[tuple[NodeId, Locator | None]]:
        pool = [m for m in self.members if m[0] != exclude]
        if len(pool) <= max_count:
            return pool
        return rng.sample(pool, max_count)

    def register(self, node: NodeId, locator: Locator | None = None) -> None:
        if all(m[0] != node for m in self.members):
            self.members.append((node, locator))


def node_join(joiner: NodeId, bootstrap: Bootstrap, capacity: int, rng: random.Random,
              locator: Locator | None = None, now: int = 0) -> RoutingTable:
    """Build the joiner's table from the bootstrap's offered list."""
    if not bootstrap.alive:
        raise JoinError(f"bootstrap node {bootstrap.node} is unreachable")
    table = RoutingTable(owner=joiner, capacity=capacity)
    for peer, loc in bootstrap.receive_list(capacity, rng, exclude=joiner):
        table.add(peer, loc, now)
    table.identity = (joiner, locator)
    bootstrap.register(joiner, locator)
    return table


def remove_member(table: RoutingTable, suspect: NodeId) -> RoutingTable:
    table.remove(suspect)
    return table


def refresh_membership(table: RoutingTable, peers: dict[NodeId, RoutingTable], rng: random.Random,
                       alive=lambda node: True, now: int = 0) -> list[NodeId]:
    """One synchronous refresh round for ``table.owner``.

    Pulls up to ``capacity`` entries from a random peer of the node's own
    table and merges them. The peer also learns the requester. Returns the
    evicted ids; an unresponsive peer is removed instead.
    """
    if not table.entries:
        return []
    tmp = rng.choice(table.entries)
    if not alive(tmp):
        table.remove(tmp)
        return []
    peer = peers[tmp]
    owner_loc = table.identity[1] if table.identity else None
    offered = peer.offer(table.capacity, exclude=table.owner)
    peer.merge([(table.owner, owner_loc)], rng, now)
    return table.merge(offered, rng, now)
