"""
Command-line entry point for the Coulomb mean-field lab.
Provides logging setup, the run / report / validate verbs and exit-code mapping.

Usage:
    python -m app.main run --config configs/smoke.yaml [--out DIR] [--workers K] [--seed-offset S]
    python -m app.main report --out results
    python -m app.main validate --config configs/energy_balance.yaml
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from app.config import AppConfig
from app.utils.exceptions import describe_error, exit_code_for
from app.utils.logger import get_logger

logger = get_logger("app.main")


def setup_logging():
    """
    Configure logging based on application settings.
    """
    # Remove all existing handlers
    for h in list(logging.root.handlers):
        logging.root.removeHandler(h)

    # Set log level from configuration
    log_level = getattr(logging, AppConfig.LOGGING.LOG_LEVEL.upper(), logging.INFO)
    logging.root.setLevel(log_level)
    formatter = logging.Formatter(AppConfig.LOGGING.LOG_FORMAT)

    # File logging (if enabled)
    if AppConfig.LOGGING.ENABLE_FILE_LOGGING:
        os.makedirs(AppConfig.LOG_DIR, exist_ok=True)
        handler = logging.FileHandler(os.path.join(AppConfig.LOG_DIR, "app.log"), mode="a", encoding="utf-8")
        handler.setFormatter(formatter)
        logging.root.addHandler(handler)

        # Force immediate writing by disabling buffering
        handler.stream.reconfigure(line_buffering=True)

    # Console logging (if enabled)
    if AppConfig.LOGGING.ENABLE_CONSOLE_LOGGING:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        logging.root.addHandler(console_handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanfield", description=AppConfig.APP_NAME)
    parser.add_argument("--version", action="version", version=AppConfig.APP_VERSION)
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="Execute one experiment config")
    run.add_argument("--config", required=True, help="Experiment YAML file")
    run.add_argument("--out", help="Output directory (overrides output_dir)")
    run.add_argument("--workers", type=int, default=None, help="Worker processes for seed-parallel work")
    run.add_argument("--seed-offset", type=int, default=0, help="Offset added to every seed")

    report = verbs.add_parser("report", help="Summary and acceptance tables for a results directory")
    report.add_argument("--out", default=AppConfig.RESULTS_DIR, help="Results directory")
    report.add_argument("--config", help="Ignored; accepted for a uniform command line")

    validate = verbs.add_parser("validate", help="Check a config without computing anything")
    validate.add_argument("--config", required=True, help="Experiment YAML file")
    validate.add_argument("--seed-offset", type=int, default=0, help="Offset added to every seed")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, dispatch the verb and map failures to exit codes.

    Returns:
        0 on success; 2 for config / input errors, 3 for numerical failures, 4 for IO failures
    """
    args = build_parser().parse_args(argv)
    setup_logging()

    config_errors = AppConfig.validate_config()
    if config_errors:
        for error in config_errors:
            logger.error(f"❌ Configuration error: {error}")
        return 2
    logger.debug("Process configuration", **AppConfig.get_config_summary())

    # imported here so --help stays fast
    from app import runner

    try:
        if args.verb == "run":
            manifest = runner.run(args.config, out=args.out, workers=args.workers, seed_offset=args.seed_offset)
            print(f"{manifest.name}: {manifest.status}, {len(manifest.files)} files")
        elif args.verb == "report":
            summary = runner.report(args.out)
            print(f"acceptance: {summary['passed']} pass, {summary['failed']} fail -> {summary['acceptance']}")
        else:
            config = runner.validate(args.config, seed_offset=args.seed_offset)
            print(f"{config.name}: valid ({config.kind})")
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"❌ {args.verb} failed", exit_code=code, **describe_error(e))
        print(f"error: {e}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
