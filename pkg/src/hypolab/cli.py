"""Command line entry point: ``hypolab <experiment> --config FILE``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import algebra
from .runner import EXPERIMENTS, ConfigError, ExperimentConfig, SpecResolutionError, emit, run

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SPEC = 0, 1, 2, 3

log = logging.getLogger("hypolab")


def build_parser():
    ap = argparse.ArgumentParser(prog="hypolab", description="Heat-kernel gradient experiments on Carnot groups.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="JSON experiment configuration")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    ap.add_argument("--out", help="output prefix (overrides the configured one)")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--no-figure", action="store_true", help="skip PREFIX.png")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ConfigError(["top level must be an object"])
        cfg = ExperimentConfig.from_dict(doc, {"experiment": args.experiment, "seed": args.seed,
                                               "output": args.out})
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(cfg)
    except SpecResolutionError as exc:
        print(f"group error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except algebra.AlgebraError as exc:
        print(f"group error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    for path in emit(report, args.format, cfg.output, figure=not args.no_figure):
        log.info("wrote %s", path)
    for c in report.checks:
        if not c.passed:
            print(f"check failed: {c.name} {c.detail}".rstrip(), file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
