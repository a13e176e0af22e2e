"""Command-line entry point.

    latent-verify <command> --config <path> --run-dir <path> [--seed N] [--rounds K]

Commands run one pipeline stage each, in the order
gen-data, train-encoder, map-regions, fit-gp, build-abstraction, verify,
refine, decode, report. Stages are resumable: a rerun with unchanged inputs
is a no-op, and a changed upstream artifact aborts with StaleArtifact.
"""

from __future__ import annotations

import argparse
import sys

from . import ConfigError, LatentVerifyError
from .pipeline import STAGE_ORDER, run_command


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latent-verify",
        description="Verify a dynamical system against an LTL formula through "
                    "a learned convex latent abstraction.")
    parser.add_argument("command", choices=STAGE_ORDER)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--run-dir", required=True, help="artifact directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override [run].seed")
    parser.add_argument("--rounds", type=int, default=None,
                        help="override [refine].rounds")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run_command(args.command, args.config, args.run_dir,
                    seed=args.seed, rounds=args.rounds)
    except LatentVerifyError as e:
        print(f"error: {e.__class__.__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
