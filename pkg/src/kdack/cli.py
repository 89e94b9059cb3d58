"""Command line entry point: ``sim run``, ``sim sweep``, ``sim golden``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, SweepSpec, parse_config
from .golden import GOLDENS, replay_golden
from .metrics import communication_cost
from .sim_engine import Scenario, Simulator, write_log
from .sweep import replay, rows_to_csv, run_sweep, write_csv

EXIT_OK, EXIT_INVALID, EXIT_CHECKPOINT = 0, 1, 2


def _cmd_run(args) -> int:
    obj, resolved = parse_config(args.config)
    if isinstance(obj, SweepSpec):
        obj = obj.template
    seed = args.seed if args.seed is not None else resolved["seed"]
    rep = Simulator(obj, seed).run()
    if args.log:
        write_log(rep.log, args.log)
    out = {
        "config": resolved,
        "seed": seed,
        "delivered": {str(k): v for k, v in rep.delivered.items()},
        "elapsed_slots": {str(k): v for k, v in rep.elapsed_slots.items()},
        "bytes_total": communication_cost(rep),
        "data_msgs": rep.data_msgs,
        "ack_msgs": rep.ack_msgs,
        "member_msgs": rep.member_msgs,
        "retries": rep.retries,
        "removed_members": rep.removed_members,
        "failures": rep.failures,
        "end_slot": rep.end_slot,
        "truncated": rep.truncated,
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    obj, resolved = parse_config(args.config)
    if isinstance(obj, Scenario):
        obj = SweepSpec(template=obj, resolved=resolved)
    if args.replay:
        try:
            k, rate, seed = args.replay.split(",")
            row = replay(obj, int(k), float(rate), int(seed))
        except ValueError:
            raise ConfigError("--replay", "expected K,FAULT_RATE,SEED") from None
        sys.stdout.write(rows_to_csv([row]))
        return EXIT_OK
    rows = run_sweep(obj, jobs=args.jobs)
    if args.out:
        write_csv(rows, args.out, resolved)
    else:
        sys.stdout.write(rows_to_csv(rows, resolved))
    return EXIT_OK


def _cmd_golden(args) -> int:
    ok, lines, checks = replay_golden(args.name)
    for line in lines:
        print(line)
    print()
    for label, passed in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {label}")
    if not ok:
        failed = [label for label, passed in checks if not passed]
        print(f"checkpoint failed: {failed[0]}", file=sys.stderr)
        return EXIT_CHECKPOINT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description="Delayed K-hop ack dissemination simulator")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="execute one scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--log", help="write the transmission log CSV here")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="K x fault-rate sweep of paired runs")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="CSV output path (default stdout)")
    s.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    s.add_argument("--replay", metavar="K,RATE,SEED", help="re-execute one cell from its row")
    s.set_defaults(func=_cmd_sweep)

    g = sub.add_parser("golden", help="replay a worked example with checkpoints")
    g.add_argument("name", choices=sorted(GOLDENS))
    g.set_defaults(func=_cmd_golden)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
