"""Communication cost, efficiency ratio and reachability over run reports."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from statistics import mean
from typing import Iterable, Mapping

from .net_model import NodeId, Outcome, TxRecord

ROW_FIELDS = (
    "k", "fault_rate", "seed", "pairs", "delivered", "delivery_rate", "bytes_total",
    "data_msgs", "ack_msgs", "mean_efficiency", "mean_slots",
)


@dataclass
class RunReport:
    delivered: dict[int, bool] = field(default_factory=dict)
    pairs: dict[int, tuple[NodeId, NodeId]] = field(default_factory=dict)
    inject_slot: dict[int, int] = field(default_factory=dict)
    delivery_slot: dict[int, int] = field(default_factory=dict)
    data_msgs: int = 0
    ack_msgs: int = 0
    member_msgs: int = 0
    member_bytes: int = 0
    bytes_total: int = 0
    retries: int = 0
    removed_members: int = 0
    failures: list[tuple[int, NodeId, str]] = field(default_factory=list)
    end_slot: int = 0
    truncated: bool = False
    k_trace: list[tuple[int, NodeId, int]] = field(default_factory=list)
    log: list[TxRecord] = field(default_factory=list, repr=False)

    @property
    def elapsed_slots(self) -> dict[int, int]:
        return {c: self.delivery_slot[c] - self.inject_slot[c] for c in self.delivery_slot}

    @property
    def delivery_rate(self) -> float:
        if not self.delivered:
            return float("nan")
        return sum(self.delivered.values()) / len(self.delivered)

    @classmethod
    def from_log(cls, log: list[TxRecord], **kw) -> RunReport:
        rep = cls(log=log, **kw)
        for rec in log:
            if rec.outcome is Outcome.REFUSED:
                continue
            if rec.kind == "DATA":
                rep.data_msgs += 1
            elif rec.kind == "ACK":
                rep.ack_msgs += 1
            else:
                rep.member_msgs += 1
                rep.member_bytes += rec.bytes
            rep.bytes_total += rec.bytes
        return rep


def communication_cost(report: RunReport) -> int:
    """Bytes put on the air during the run: data, acks, retries, losses and membership."""
    return report.bytes_total


def efficiency(faulty: RunReport, clean: RunReport) -> float:
    """Mean over chunks delivered in both runs of clean/faulty elapsed slots.

    NaN when no chunk was delivered in both runs.
    """
    f, c = faulty.elapsed_slots, clean.elapsed_slots
    common = sorted(set(f) & set(c))
    ratios = []
    for cid in common:
        if f[cid] == c[cid]:
            ratios.append(1.0)
        elif f[cid] > 0:
            ratios.append(c[cid] / f[cid])
    return mean(ratios) if ratios else float("nan")


def overlay_reachable(tables: Mapping[NodeId, Iterable[NodeId]], src: NodeId) -> set[NodeId]:
    """Breadth-first search over the routing-table digraph."""
    seen = {src}
    todo = deque([src])
    while todo:
        u = todo.popleft()
        for v in tables.get(u, ()):
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


def oracle_pairs(tables: Mapping[NodeId, Iterable[NodeId]],
                 pairs: Iterable[tuple[NodeId, NodeId]]) -> set[tuple[NodeId, NodeId]]:
    cache: dict[NodeId, set[NodeId]] = {}
    out = set()
    for s, d in pairs:
        if s not in cache:
            cache[s] = overlay_reachable(tables, s)
        if d in cache[s]:
            out.add((s, d))
    return out


def reachability(reports: Iterable[RunReport]) -> float:
    """Fraction of workload (source, destination) pairs whose chunk arrived."""
    total = hit = 0
    for rep in reports:
        for cid, ok in rep.delivered.items():
            total += 1
            hit += bool(ok)
    return hit / total if total else float("nan")


def delivered_pairs(report: RunReport) -> set[tuple[NodeId, NodeId]]:
    return {report.pairs[c] for c, ok in report.delivered.items() if ok}


def summary_row(k: int, fault_rate: float, seed: int, faulty: RunReport, clean: RunReport) -> dict:
    delivered = sum(faulty.delivered.values())
    slots = list(faulty.elapsed_slots.values())
    return {
        "k": k,
        "fault_rate": fault_rate,
        "seed": seed,
        "pairs": len(faulty.delivered),
        "delivered": delivered,
        "delivery_rate": faulty.delivery_rate,
        "bytes_total": faulty.bytes_total,
        "data_msgs": faulty.data_msgs,
        "ack_msgs": faulty.ack_msgs,
        "mean_efficiency": efficiency(faulty, clean),
        "mean_slots": mean(slots) if slots else float("nan"),
    }


def is_nan(x) -> bool:
    return isinstance(x, float) and math.isnan(x)
