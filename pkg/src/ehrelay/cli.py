"""Command-line entry point: ``ehrelay run`` and ``ehrelay validate``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .experiments import ConfigError, run_experiment, validate_config
from .lp import SolverStall

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STALL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehrelay", description="Source power planning for EH relay networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep and write a CSV")
    run.add_argument("--config", required=True, help="experiment config (JSON)")
    run.add_argument("--out", help="output CSV path (defaults to the config's 'out' or stdout)")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--trials", type=int, help="override trials per sweep point")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--timing", action="store_true",
                     help="fill runtime_ms (makes the output machine dependent)")

    val = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    val.add_argument("--config", required=True)
    return parser


def _report(exc: ConfigError) -> None:
    print("config error:", file=sys.stderr)
    for p in exc.problems:
        print(f"  - {p}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = validate_config(args.config)
        if args.command == "validate":
            print(json.dumps(spec.to_dict(), indent=2))
            return EXIT_OK
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.trials is not None:
            overrides["trials"] = args.trials
        if overrides:
            from .experiments import normalize_spec

            data = spec.to_dict()
            data.update(overrides)
            spec = normalize_spec(data)
        if args.jobs < 1:
            raise ConfigError([f"--jobs must be >= 1 (got {args.jobs})"])
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG

    out = args.out or spec.out
    try:
        text = run_experiment(spec, out, jobs=args.jobs, timing=args.timing)
    except SolverStall as exc:
        print(f"solver stall: {exc}", file=sys.stderr)
        return EXIT_STALL
    if out is None:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
