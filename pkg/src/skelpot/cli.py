"""``skelpot verify|sweep|solve|truncation --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import COMMANDS, run_command
from .config import ConfigError, RunConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skelpot", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path, help="flat key = value configuration file")
    parser.add_argument("--out", type=Path, default=Path("skelpot-out"), help="output directory")
    parser.add_argument("--seed", type=int, help="random seed (overrides the config)")
    parser.add_argument("--threads", type=int, help="worker threads for sweeps (overrides the config)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if overrides:
            cfg = cfg.with_overrides(**overrides)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"skelpot: {exc}", file=sys.stderr)
        return 2
    rows, code = run_command(args.command, cfg, args.out)
    failed = [r for r in rows if r.passed is False]
    skipped = sum(r.passed is None for r in rows)
    print(f"{args.command}: {len(rows) - len(failed) - skipped} passed, {len(failed)} failed, {skipped} skipped"
          f" (config {cfg.hash}); report in {args.out / (args.command + '_checks.csv')}")
    for r in failed:
        print(f"  FAIL {r.check}: {r.value:.3e} (threshold {r.threshold:.3e}) {r.note}".rstrip())
    return code


if __name__ == "__main__":
    raise SystemExit(main())
