"""``neighbor-confidence`` command line.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 training divergence.
Diagnostics go to stderr (level from ``NC_LOG``); stdout gets one summary line
per command.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

from . import pipeline
from .config import demo_config, load_config
from .errors import FormatError, NeighborConfidenceError, TrainingDivergedError

log = logging.getLogger("neighbor_confidence")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3
COMMANDS = ("generate", "train", "embed", "fit", "score", "select", "report", "run")


def _tolerance(text: str) -> float:
    if text == "inf":
        return math.inf
    value = float(text)
    if math.isnan(value) or value < 0:
        raise argparse.ArgumentTypeError("tolerance must be >= 0 or 'inf'")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neighbor-confidence",
        description="Prediction confidence from nearest training neighbors in feature space.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="run config JSON (default: built-in demo config)")
    parser.add_argument("--seed", type=int, help="corpus generation seed")
    parser.add_argument("--out", help="run directory")
    parser.add_argument("--budget", type=int, help="labeling budget per batch")
    parser.add_argument("--tolerance", type=_tolerance, help="acceptable reconstruction error, or 'inf'")
    parser.add_argument("--k", type=int, help="neighbors averaged for the distance")
    parser.add_argument("--epochs", type=int, help="training epochs")
    parser.add_argument("--retrain", action=argparse.BooleanOptionalAction, default=None,
                        help="retrain the autoencoder between expansion batches")
    parser.add_argument("--threshold-mode", choices=("tolerance", "budget"), default="tolerance",
                        help="score: threshold source")
    parser.add_argument("--corpus", help="corpus file (default: <out>/corpus.ncpc)")
    parser.add_argument("--weights", help="weight file (default: <out>/model.ncae)")
    parser.add_argument("--embeddings", help="embedding CSV (default: <out>/embeddings.csv)")
    parser.add_argument("--calibration", help="calibration JSON (default: <out>/calibration.json)")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("NC_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr, level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def run_command(args) -> list[str]:
    cfg = load_config(args.config) if args.config else demo_config()
    cfg = cfg.with_overrides(
        seed=args.seed, out=args.out, budget=args.budget, tolerance=args.tolerance,
        k=args.k, epochs=args.epochs, retrain=args.retrain,
    )
    cmd = args.command
    if cmd == "generate":
        return [pipeline.generate(cfg)]
    if cmd == "train":
        return [pipeline.train(cfg, args.corpus)]
    if cmd == "embed":
        return [pipeline.embed(cfg, args.corpus, args.weights)]
    if cmd == "fit":
        return [pipeline.fit(cfg, args.embeddings)[0]]
    if cmd == "score":
        return [pipeline.score(cfg, args.embeddings, args.calibration, args.threshold_mode)[0]]
    if cmd == "select":
        return [pipeline.select(cfg, args.embeddings, args.calibration, args.corpus)[0]]
    if cmd == "report":
        return [pipeline.report(cfg, args.embeddings)]
    return pipeline.run_all(cfg)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        lines = run_command(args)
    except TrainingDivergedError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except (NeighborConfidenceError, ValueError) as exc:
        # FormatError lands here too: a corrupt input is a validation failure
        log.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s: %s", getattr(exc, "filename", None) or "I/O", exc.strerror or exc)
        return EXIT_IO
    for line in lines:
        print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
