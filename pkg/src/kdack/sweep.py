"""K x fault-rate sweeps over seeded paired runs, emitted as CSV."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .config import SweepSpec
from .metrics import ROW_FIELDS, summary_row
from .sim_engine import Scenario, paired_run

FIELDS = ROW_FIELDS + ("error",)


def cell_seed(master_seed: int, index: int) -> int:
    """Per-cell seed; independent of worker assignment so output order never matters."""
    h = hashlib.sha256(f"{master_seed}:{index}".encode()).hexdigest()
    return int(h[:8], 16)


def cell_scenario(template: Scenario, k: int, fault_rate: float) -> Scenario:
    params = replace(template.params, K=k)
    faults = replace(template.faults, link_loss_rate=fault_rate)
    return replace(template, params=params, faults=faults)


def run_cell(template: Scenario, k: int, fault_rate: float, seed: int) -> dict:
    try:
        faulty, clean = paired_run(cell_scenario(template, k, fault_rate), seed)
        row = summary_row(k, fault_rate, seed, faulty, clean)
        row["error"] = ""
    except Exception as exc:  # recorded in-row, the sweep keeps going
        row = {f: "" for f in ROW_FIELDS}
        row.update(k=k, fault_rate=fault_rate, seed=seed, error=f"{type(exc).__name__}: {exc}")
    return row


def _run_cell_args(args):
    return run_cell(*args)


def cells(spec: SweepSpec) -> list[tuple[int, float, int]]:
    seeds = [cell_seed(spec.master_seed, i) for i in range(spec.seeds)]
    return [(k, r, s) for k in spec.k_values for r in spec.fault_rates for s in seeds]


def run_sweep(spec: SweepSpec, jobs: int | None = 1) -> list[dict]:
    """One row per (k, fault_rate, seed), in that nesting order."""
    todo = [(spec.template, k, r, s) for k, r, s in cells(spec)]
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(todo) <= 1:
        return [run_cell(*a) for a in todo]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map preserves submission order
        return list(pool.map(_run_cell_args, todo, chunksize=max(1, len(todo) // (4 * jobs))))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict], resolved: dict | None = None) -> str:
    buf = io.StringIO()
    if resolved is not None:
        buf.write("# config: " + json.dumps(resolved, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for row in rows:
        w.writerow([_fmt(row[f]) for f in FIELDS])
    return buf.getvalue()


def write_csv(rows: list[dict], path, resolved: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows, resolved))


def replay(spec: SweepSpec, k: int, fault_rate: float, seed: int) -> dict:
    """Re-execute a single sweep cell from the values in its row."""
    return run_cell(spec.template, k, fault_rate, seed)
