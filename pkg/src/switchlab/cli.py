"""Command-line experiment runner.

One task per invocation::

    switchlab <task> --config CONFIG.json [--seed N] [--dt X] [--threads N] [--out DIR]

Tasks: simulate, scan, dynkin, hitting, tv, exit-time, recurrence.  Flags
override config fields which override defaults.  Exit codes: 0 success,
2 config error, 3 numeric failure (non-convergence or explosion guard).
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import TASKS, load_config, parse_config
from .errors import ConfigError
from .tasks import run

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchlab",
        description="Numerical laboratory for switching diffusions with "
                    "path-dependent regime switching.",
    )
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task, help=f"run the {task} task")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="RNG seed override")
        p.add_argument("--dt", type=float, default=None, help="time step override")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="FIELD=JSON",
                       help="override any config field, value parsed as JSON")
    return parser


def _collect_overrides(args) -> dict:
    overrides = {
        "seed": args.seed,
        "dt": args.dt,
        "threads": args.threads,
        "out": args.out,
    }
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects FIELD=JSON, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = _collect_overrides(args)
        if args.config:
            cfg = load_config(args.config, overrides)
            if cfg.task != args.task:
                raise ConfigError(
                    f"task: config says {cfg.task!r} but the {args.task!r} "
                    "subcommand was invoked")
        else:
            cfg = parse_config({"task": args.task}, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
