"""Command-line front end: ``convexcurv <subcommand> --config scenario.json``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigValidationError
from .experiments import load_config, run_scenario

SUBCOMMANDS = {
    "check-quadruples": "check_quadruples",
    "distance": "distance",
    "search-violation": "search_violation",
    "mollify": "mollify_convergence",
    "inf-sup": "infsup_convergence",
    "boundary-chart": "boundary_chart",
    "pipeline": "full_pipeline",
}

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2

log = logging.getLogger("convexcurv")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario JSON file")
    common.add_argument("--out", help="output directory (overrides the config's 'output')")
    common.add_argument("--seed", type=_u64, help="overrides the config seed")
    common.add_argument("--jobs", type=_positive, default=1, help="worker processes (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="convexcurv",
                                     description="Intrinsic curvature checks and regularisation of convex graphs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, experiment in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[common], help=f"run the {experiment} experiment")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(args.config)
        report = run_scenario(config, args.out, args.seed, args.jobs, SUBCOMMANDS[args.command])
    except ConfigValidationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    if not report.ok:
        print(f"run failed: {report.error} (partial report written)", file=sys.stderr)
        return EXIT_FAILED
    log.info("wrote %s", ", ".join(report.manifest))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
