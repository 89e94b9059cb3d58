"""JSON configuration files for single runs and sweeps."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .net_model import EnergyState, FaultSpec, Placement, TopologySpec
from .protocol import DEFAULT_PAYLOAD, ProtocolParams
from .sim_engine import Injection, Scenario, TableMode


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


DEFAULTS = {
    "nodes": None,
    "names": None,
    "placement": "line",
    "radio_range": 0.25,
    "positions": None,
    "ack_range": None,
    "table_mode": None,
    "tables": None,
    "bootstrap": 0,
    "join_warmup_rounds": 5,
    "K": 4,
    "I": 4,
    "c_t": 3.0,
    "t_max": 1000,
    "adaptive": False,
    "K_max": 10,
    "localize": True,
    "shortcut": False,
    "prefer_destination": True,
    "hop_cap": None,
    "refresh": False,
    "refresh_period": 50,
    "dedup_capacity": 256,
    "payload_size": DEFAULT_PAYLOAD,
    "initial_energy": 10_000.0,
    "theta_refuse": 10.0,
    "theta_delegate": 100.0,
    "tx_cost": 2.0,
    "rx_cost": 1.0,
    "energy_levels": {},
    "link_loss_rate": 0.0,
    "corrupt_nodes": [],
    "crashed_nodes": [],
    "slow_nodes": {},
    "drop_once": [],
    "fault_seed": 0,
    "collisions": False,
    "workload": None,
    "max_slots": 100_000,
    "seed": 0,
    "sweep": None,
}

SWEEP_DEFAULTS = {
    "k_values": list(range(1, 11)),
    "fault_rates": [0.0],
    "seeds": 1,
    "master_seed": 0,
}


@dataclass
class SweepSpec:
    template: Scenario
    k_values: list[int] = field(default_factory=lambda: list(range(1, 11)))
    fault_rates: list[float] = field(default_factory=lambda: [0.0])
    seeds: int = 1
    master_seed: int = 0
    resolved: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.k_values:
            raise ConfigError("k_values", "must be non-empty")
        if not self.fault_rates:
            raise ConfigError("fault_rates", "must be non-empty")
        if self.seeds < 1:
            raise ConfigError("seeds", "must be >= 1")
        for k in self.k_values:
            if int(k) < 1:
                raise ConfigError("k_values", f"K={k} must be >= 1")
        for r in self.fault_rates:
            if not 0.0 <= float(r) <= 1.0:
                raise ConfigError("fault_rates", f"{r} is not a probability")


def _int(cfg, key, lo=None):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be >= {lo}, got {v}")
    return v


def _num(cfg, key, lo=None):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be >= {lo}, got {v}")
    return float(v)


def _prob(cfg, key):
    v = _num(cfg, key)
    if not 0.0 <= v <= 1.0:
        raise ConfigError(key, f"{v} is not a probability in [0, 1]")
    return v


def _bool(cfg, key):
    v = cfg[key]
    if not isinstance(v, bool):
        raise ConfigError(key, f"expected true/false, got {v!r}")
    return v


def resolve(raw: dict) -> dict:
    """Apply defaults and reject unknown keys. Returns a new dict."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a key/value object")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(copy.deepcopy(raw))
    if cfg["nodes"] is None:
        raise ConfigError("nodes", "required")
    n = _int(cfg, "nodes", 2)
    if cfg["table_mode"] is None:
        cfg["table_mode"] = "chain" if cfg["placement"] == "line" else "join"
    if cfg["workload"] is None:
        cfg["workload"] = [{"slot": 0, "origin": 0, "dest": n - 1}]
    if cfg["sweep"] is not None:
        if not isinstance(cfg["sweep"], dict):
            raise ConfigError("sweep", "must be an object")
        bad = sorted(set(cfg["sweep"]) - set(SWEEP_DEFAULTS))
        if bad:
            raise ConfigError(bad[0], "unknown sweep key")
        sw = copy.deepcopy(SWEEP_DEFAULTS)
        sw.update(cfg["sweep"])
        cfg["sweep"] = sw
    return cfg


def scenario_from_dict(cfg: dict) -> Scenario:
    """Build a Scenario from a resolved configuration dict."""
    n = _int(cfg, "nodes", 2)
    try:
        placement = Placement(cfg["placement"])
    except ValueError:
        raise ConfigError("placement", f"unknown placement {cfg['placement']!r}") from None
    try:
        table_mode = TableMode(cfg["table_mode"])
    except ValueError:
        raise ConfigError("table_mode", f"unknown table mode {cfg['table_mode']!r}") from None
    radio_range = _num(cfg, "radio_range")
    if radio_range <= 0:
        raise ConfigError("radio_range", "must be positive")
    positions = cfg["positions"]
    if positions is not None:
        positions = tuple((float(x), float(y)) for x, y in positions)
    if placement is Placement.EXPLICIT and (positions is None or len(positions) != n):
        raise ConfigError("positions", "explicit placement needs one [x, y] per node")
    topo = TopologySpec(n, placement, radio_range, positions)

    K = _int(cfg, "K")
    if K < 1:
        raise ConfigError("K", f"must be >= 1, got {K}")
    I = _int(cfg, "I")
    if I < 1:
        raise ConfigError("I", f"must be >= 1, got {I}")
    hop_cap = cfg["hop_cap"]
    if hop_cap is not None:
        hop_cap = _int(cfg, "hop_cap", 1)
    params = ProtocolParams(
        K=K,
        I=I,
        c_t=_num(cfg, "c_t"),
        t_max=_int(cfg, "t_max", 1),
        adaptive=_bool(cfg, "adaptive"),
        k_max=_int(cfg, "K_max", 1),
        localize=_bool(cfg, "localize"),
        shortcut=_bool(cfg, "shortcut"),
        prefer_destination=_bool(cfg, "prefer_destination"),
        hop_cap=hop_cap,
        refresh=_bool(cfg, "refresh"),
        refresh_period=_int(cfg, "refresh_period", 1),
        dedup_capacity=_int(cfg, "dedup_capacity", 1),
    )
    if params.c_t <= 0:
        raise ConfigError("c_t", "must be positive")

    def ids(key):
        vals = cfg[key]
        if not isinstance(vals, list) or any(not isinstance(v, int) or not 0 <= v < n for v in vals):
            raise ConfigError(key, f"expected a list of node ids in [0, {n})")
        return frozenset(vals)

    try:
        faults = FaultSpec(
            link_loss_rate=_prob(cfg, "link_loss_rate"),
            corrupt_nodes=ids("corrupt_nodes"),
            crashed_nodes=ids("crashed_nodes"),
            slow_nodes=tuple(sorted((int(k), int(v)) for k, v in cfg["slow_nodes"].items())),
            drop_once=frozenset((int(a), int(b)) for a, b in cfg["drop_once"]),
            seed=_int(cfg, "fault_seed", 0),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("corrupt_nodes", str(exc)) from None

    try:
        energy = EnergyState(
            level=_num(cfg, "initial_energy", 0),
            theta_refuse=_num(cfg, "theta_refuse", 0),
            theta_delegate=_num(cfg, "theta_delegate", 0),
            tx_cost=_num(cfg, "tx_cost", 0),
            rx_cost=_num(cfg, "rx_cost", 0),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("theta_refuse", str(exc)) from None

    payload = _int(cfg, "payload_size", 0)
    workload = []
    for item in cfg["workload"]:
        try:
            inj = Injection(int(item.get("slot", 0)), int(item["origin"]), int(item["dest"]),
                            int(item.get("payload_size", payload)))
        except (KeyError, TypeError, AttributeError):
            raise ConfigError("workload", f"bad entry {item!r}") from None
        workload.append(inj)

    ack_range = cfg["ack_range"]
    if ack_range is not None:
        ack_range = _num(cfg, "ack_range")
    tables = cfg["tables"]
    if tables is not None:
        tables = {int(k): [int(x) for x in v] for k, v in tables.items()}
    try:
        sc = Scenario(
            topology=topo,
            params=params,
            faults=faults,
            workload=workload,
            table_mode=table_mode,
            tables=tables,
            energy=energy,
            energy_levels={int(k): float(v) for k, v in cfg["energy_levels"].items()},
            ack_range=ack_range,
            collisions=_bool(cfg, "collisions"),
            bootstrap=_int(cfg, "bootstrap", 0),
            join_warmup_rounds=_int(cfg, "join_warmup_rounds", 0),
            max_slots=_int(cfg, "max_slots", 1),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("workload", str(exc)) from None
    return sc


def load(raw: dict) -> tuple[Scenario | SweepSpec, dict]:
    cfg = resolve(raw)
    scenario = scenario_from_dict(cfg)
    sw = cfg["sweep"]
    if sw is None:
        return scenario, cfg
    spec = SweepSpec(
        template=scenario,
        k_values=[int(k) for k in sw["k_values"]],
        fault_rates=[float(r) for r in sw["fault_rates"]],
        seeds=int(sw["seeds"]),
        master_seed=int(sw["master_seed"]),
        resolved=cfg,
    )
    return spec, cfg


def parse_config(path) -> tuple[Scenario | SweepSpec, dict]:
    """Read a JSON config file; returns the validated object and the resolved dict."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"not valid JSON: {exc}") from None
    return load(raw)
