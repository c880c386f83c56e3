"""Command line entry point.

    stabmdp <experiment> --config <file> --out <dir> [--seed k]

Experiments: analytic-lqr, qlearn-lqr, cstr, tube.  Without --config the
documented defaults run.  Exit codes: 0 success, 2 configuration error,
3 numerical failure.  STABMDP_THREADS controls sweep parallelism.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, load_experiment_config
from .errors import ConfigError, StabMdpError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stabmdp",
        description="Stability-constrained MDP experiments (CSV + SVG outputs).",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS,
                        help="which reproduction run to execute")
    parser.add_argument("--config", help="experiment configuration file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed override (otherwise from the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = None
        if args.config:
            try:
                with open(args.config, "r", encoding="utf-8") as handle:
                    text = handle.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from exc
        cfg = load_experiment_config(args.experiment, text, seed=args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    from .experiments import run_experiment

    try:
        summary = run_experiment(args.experiment, cfg, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StabMdpError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    for key, value in sorted(summary.items()):
        if isinstance(value, (int, float, bool, str)):
            print(f"{key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
