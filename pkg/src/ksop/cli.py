"""Command line entry point: ``ksop <command> --config cfg.ini``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, load_config
from .gaussian import DegenerateDensityError
from .integrate import IntegrationError
from .reduced import VARIANTS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ORDERING = 2
EXIT_NUMERICAL = 3

COMMANDS = ("sample", "fit-density", "autocorr", "noise-model", "kernel", "truth", "estimate", "compare")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksop", description="Reduced models for the truncated KS system.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=Path, default=Path("."))
        sp.add_argument("--jobs", type=int, default=1)
        if name == "estimate":
            sp.add_argument("--variant", choices=VARIANTS, default="short-memory")
    return parser


def run(cfg: ExperimentConfig, command: str, out: Path, jobs: int = 1, variant: str | None = None) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if command == "sample":
        pipeline.stage_sample(cfg, out, jobs)
    elif command == "fit-density":
        pipeline.stage_fit(cfg, out)
    elif command == "autocorr":
        pipeline.stage_autocorr(cfg, out, jobs)
    elif command == "noise-model":
        pipeline.stage_noise(cfg, out)
    elif command == "kernel":
        pipeline.stage_kernel(cfg, out, jobs)
    elif command == "truth":
        pipeline.stage_truth(cfg, out, jobs)
    elif command == "estimate":
        pipeline.stage_estimate(cfg, out, variant or "short-memory", jobs)
    elif command == "compare":
        _, ok = pipeline.stage_compare(cfg, out)
        if ok is False:
            logging.getLogger("ksop").warning("short-memory error is not below galerkin for every mode")
            return EXIT_ORDERING
    else:
        raise ValueError(f"unknown command {command!r}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config).with_seed(args.seed)
    try:
        return run(cfg, args.command, args.out, args.jobs, getattr(args, "variant", None))
    except (IntegrationError, DegenerateDensityError) as exc:
        logging.getLogger("ksop").error("%s", exc)
        return EXIT_NUMERICAL
    except (FileNotFoundError, ValueError) as exc:
        logging.getLogger("ksop").error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
