"""Command-line entry point: python -m cmd.curvectrl.main <command>."""

import argparse
import json
import logging
import sys
from typing import List, Optional

import structlog

from cmd.curvectrl import config, study, verify
from cmd.curvectrl.exceptions import CurvectrlError

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_ERROR = 2

_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


def configure_logging(level: str = config.LOG_LEVEL) -> None:
    """Key-value log lines on stderr; stdout is reserved for reports."""
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.KeyValueRenderer(key_order=["timestamp", "level", "event"]),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(_LEVELS.get(level.lower(), logging.INFO)),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvectrl",
        description="Heat-equation optimal control with a moving point source.",
    )
    parser.add_argument("--log-level", default=config.LOG_LEVEL, choices=sorted(_LEVELS))
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("solve", "single forward solve on level 0"),
        ("optimize", "solve the control problem on level 0"),
        ("study", "convergence study with EOC table"),
    ]:
        cmd_parser = sub.add_parser(name, help=help_text)
        cmd_parser.add_argument("--config", default=None, help="YAML study configuration")
        cmd_parser.add_argument("--out", default=None, help="output directory (overrides output.dir)")

    verify_parser = sub.add_parser("verify", help="run the property diagnostics")
    verify_parser.add_argument("--seed", type=int, default=0)
    verify_parser.add_argument(
        "--fault", action="append", default=[], choices=sorted(verify.FAULTS),
        help="inject a fault (repeatable)",
    )
    verify_parser.add_argument("--json", action="store_true", help="print the report as JSON")
    return parser


RUNNERS = {
    "solve": study.run_solve,
    "optimize": study.run_optimize,
    "study": study.run_study,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        if args.command == "verify":
            report = verify.run_verify(seed=args.seed, faults=args.fault)
            if args.json:
                sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
            else:
                sys.stdout.write(report.to_text())
            return EXIT_OK if report.passed else EXIT_VERIFY_FAILED

        cfg = config.load_config(args.config)
        out_dir = RUNNERS[args.command](cfg, args.out)
        sys.stdout.write(f"{out_dir}\n")
        return EXIT_OK
    except CurvectrlError as exc:
        logger.error("command_failed", command=args.command, error=exc.detail, kind=type(exc).__name__)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
