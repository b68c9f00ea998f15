"""``odetwin`` command-line entry point.

Exit codes: 0 success, 2 invalid configuration or missing input, 3 I/O
error, 4 stale artifact (hash mismatch), 5 module error.  Messages go to
stderr; stdout stays empty.
"""

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig
from .experiments import COMMANDS, InputMissing, ModuleFailure, StaleArtifact, run_command

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_STALE, EXIT_MODULE = 0, 2, 3, 4, 5


def build_parser():
    p = argparse.ArgumentParser(prog="odetwin", description="Neural-ODE digital twins and analogue-hardware emulation.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment JSON document")
    p.add_argument("--out", help="output directory (default: $ODETWIN_OUT, else ./odetwin-out)")
    p.add_argument("--seed", type=int, help="override the config's global seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes for the noise sweep")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out or os.environ.get("ODETWIN_OUT") or "odetwin-out"
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed", "must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
    except FileNotFoundError:
        print(f"odetwin: config file {args.config} not found", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"odetwin: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        # Blow-ups are caught by explicit finiteness checks and reported with
        # their time; numpy's own floating-point warnings would only add noise.
        with np.errstate(all="ignore"):
            doc = run_command(args.command, cfg, out, args.workers)
    except (InputMissing, StaleArtifact, ModuleFailure) as exc:
        print(f"odetwin: {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"odetwin: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"odetwin: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    summary = doc.get("summary")
    if summary:
        print(f"odetwin {args.command}: " + ", ".join(f"{k}={v}" for k, v in summary.items()), file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
