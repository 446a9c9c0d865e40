"""Command line: ``hartree run|resume|validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..dynamics import IntegratorBreakdown
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .runner import EXIT_ABORT, EXIT_CONFIG, execute, resume_run

log = logging.getLogger("hartree")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hartree", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the mode named in a config file")
    run.add_argument("config", type=Path)
    run.add_argument("--output-dir", type=Path, help="override output_dir")
    run.add_argument("--seed", type=int, help="override the data seed")
    run.add_argument("--oracle", action="store_true",
                     help="exhaustive Morawetz sums instead of sampling (small grids)")

    res = sub.add_parser("resume", help="continue a run from a checkpoint file")
    res.add_argument("checkpoint", type=Path)
    res.add_argument("--extra-time", type=float, required=True)
    res.add_argument("--oracle", action="store_true")

    val = sub.add_parser("validate", help="parse and check a config without running")
    val.add_argument("config", type=Path)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"ok: mode={cfg.mode} hash={cfg.hash}")
            return 0
        if args.command == "run":
            cfg = load_config(args.config)
            cfg = cfg.with_overrides({"seed": args.seed, "output_dir": args.output_dir and str(args.output_dir)})
            out = Path(cfg["output_dir"])
            code = execute(cfg, out, oracle=args.oracle)
        else:
            code = resume_run(args.checkpoint, args.extra_time, oracle=args.oracle)
    except (ConfigError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except IntegratorBreakdown as exc:
        log.error("%s", exc)
        return EXIT_ABORT
    if code == EXIT_ABORT:
        log.error("integrator breakdown; partial outputs kept with a FAILED marker")
    return code


if __name__ == "__main__":
    sys.exit(main())
