"""Command-line entry point.

Subcommands: ber-sim (uncoded sweeps), turbo-sim (coded sweeps),
bound (analytical curves), exit (transfer charts).  Each takes
--config and --out; --seed overrides the configured master seed and
--threads caps the worker count.  Exit status is nonzero on
configuration or runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness


def _load(args) -> harness.SimConfig:
    sim = harness.parse_config(args.config)
    if args.seed is not None:
        raw = dict(sim.raw)
        raw["seed"] = args.seed
        sim = harness.SimConfig(raw=raw)
    return sim


def _cmd_ber(args, coded: bool) -> int:
    sim = _load(args)
    if bool(sim["coding"]["enabled"]) != coded:
        want = "enabled" if coded else "disabled"
        raise harness.ConfigError(f"this subcommand requires coding to be {want}")
    report = harness.run_ber_sweep(sim, threads=args.threads)
    report.write(args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_bound(args) -> int:
    sim = _load(args)
    curve = harness.run_bound(sim)
    curve.to_csv(args.out)
    with open(f"{args.out}.manifest.json", "w") as fh:
        json.dump({"seed": sim.seed, "config": sim.raw}, fh, indent=2, sort_keys=True)
    print(f"wrote {args.out}")
    return 0


def _cmd_exit(args) -> int:
    sim = _load(args)
    curves, trajectory = harness.run_exit(sim)
    ebn0 = float(sim["exit"]["ebn0_db"])
    with open(f"{args.out}_curves.csv", "w", newline="") as fh:
        fh.write(harness.exit_csv_text(curves, ebn0))
    with open(f"{args.out}_trajectory.csv", "w", newline="") as fh:
        fh.write(harness.trajectory_csv_text(trajectory, ebn0))
    with open(f"{args.out}.manifest.json", "w") as fh:
        json.dump({"seed": sim.seed, "config": sim.raw}, fh, indent=2, sort_keys=True)
    print(f"wrote {args.out}_curves.csv and {args.out}_trajectory.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otsm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ber-sim", "turbo-sim", "bound", "exit"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", required=True, help="output CSV path (or prefix for exit)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--threads", type=int, default=1, help="worker process cap")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ber-sim":
            return _cmd_ber(args, coded=False)
        if args.command == "turbo-sim":
            return _cmd_ber(args, coded=True)
        if args.command == "bound":
            return _cmd_bound(args)
        return _cmd_exit(args)
    except (harness.ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
