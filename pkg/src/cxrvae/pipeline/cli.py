"""Command-line entry point: ``cxrvae <stage> --out DIR [--config PATH] ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import (
    ConfigError, DataError, DomainError, ParseError, PolicyConfigError, StructuralError, TrainingError,
)
from . import stages

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("prepare", "train-vae", "extract", "train-clf", "evaluate", "report")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cxrvae", description="Beta-VAE embedding + classifier pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, type=Path, help="run directory")
        p.add_argument("--config", type=Path, help="YAML config (default: the run's stored config)")
        p.add_argument("--seed", type=_u64, help="override the master seed")
        p.add_argument("--stage-parallelism", type=_positive, default=1, metavar="N",
                       help="worker processes within a stage")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args) -> None:
    out: Path = args.out
    if args.command == "report":
        with stages.run_lock(out):
            path = stages.cmd_report(out)
        print(path)
        return
    with stages.run_lock(out):
        cfg = stages.resolve_config(stages.RunDir(out), args.config, args.seed, args.command)
        if args.command == "prepare":
            stages.cmd_prepare(cfg, out)
        elif args.command == "train-vae":
            stages.cmd_train_vae(cfg, out, args.stage_parallelism)
        elif args.command == "extract":
            stages.cmd_extract(cfg, out)
        elif args.command == "train-clf":
            stages.cmd_train_clf(cfg, out, args.stage_parallelism)
        elif args.command == "evaluate":
            for row in stages.cmd_evaluate(cfg, out):
                print(f"{row.tag}\t{row.report.mean:.4f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ConfigError, PolicyConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ParseError, StructuralError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
