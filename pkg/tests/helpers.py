from __future__ import annotations

import hashlib

from kdack.net_model import FaultSpec, Outcome, TopologySpec
from kdack.protocol import ProtocolParams
from kdack.sim_engine import Injection, Scenario


def line(hops: int, K: int = 4, faults: FaultSpec | None = None, **kw) -> Scenario:
    """A lossless chain 0..hops with a single chunk from 0 to the far end."""
    params = kw.pop("params", None) or ProtocolParams(K=K)
    return Scenario(
        TopologySpec(hops + 1),
        params=params,
        faults=faults or FaultSpec(),
        workload=kw.pop("workload", None) or [Injection(0, 0, hops)],
        **kw,
    )


def sends(log, kind=None, src=None, dst=None, role=None):
    return [
        r for r in log
        if (kind is None or r.kind == kind)
        and (src is None or r.src == src)
        and (dst is None or r.dst == dst)
        and (role is None or r.role == role)
    ]


def on_air(log):
    return [r for r in log if r.outcome is not Outcome.REFUSED]


def log_digest(log) -> str:
    return hashlib.sha256("\n".join(r.csv_line() for r in log).encode()).hexdigest()


class InvariantChecker:
    """Step hook asserting the per-event invariants of a run."""

    def __init__(self):
        self.violations: list[str] = []
        self._energy = None
        self._slot = -1
        self.max_holders = 0

    def __call__(self, sim, ev):
        if ev.slot < self._slot:
            self.violations.append(f"event at slot {ev.slot} after slot {self._slot}")
        self._slot = ev.slot
        cap = sim.params.I
        for node in sim.nodes:
            entries = node.table.entries
            if len(entries) > cap:
                self.violations.append(f"node {node.id} table size {len(entries)} > I={cap}")
            if node.id in entries:
                self.violations.append(f"node {node.id} lists itself")
            if len(set(entries)) != len(entries):
                self.violations.append(f"node {node.id} has duplicate entries")
        levels = [e.level for e in sim.energies]
        if self._energy is not None:
            for i, (a, b) in enumerate(zip(self._energy, levels)):
                if b > a:
                    self.violations.append(f"node {i} energy rose {a} -> {b}")
        self._energy = levels
        failed = {c for c, _, _ in sim.failures}
        for cid in sim.inject_slot:
            if sim.delivered[cid] or cid in failed:
                continue
            holders = sum(cid in n.cache for n in sim.nodes)
            self.max_holders = max(self.max_holders, holders)
            if holders == 0:
                self.violations.append(f"chunk {cid} lost custody at slot {ev.slot}")

    def finish(self, sim, rep):
        for r in rep.log:
            if r.kind == "DATA" and r.hop_count > sim.hop_cap:
                self.violations.append(f"DATA with hop_count {r.hop_count} > cap {sim.hop_cap}")
        if rep.truncated:
            self.violations.append("run hit max_slots")
        stranded = {(c, n) for c, n, why in rep.failures if why == "energy"}
        for node in sim.nodes:
            for cid in node.cache:
                if rep.delivered.get(cid) and (cid, node.id) not in stranded:
                    self.violations.append(f"delivered chunk {cid} still cached at {node.id}")
        return self.violations
