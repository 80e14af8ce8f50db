"""
Command-line interface for the transient queueing toolkit.

This module parses the `tq` command line, sets up logging and configuration,
runs the requested command and maps failures onto exit codes:
0 success, 1 failed verification, 2 input error, 3 certification failure.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

import yaml

from transient_queues.config.config_loader import load_config, resolve_threads
from transient_queues.errors import CertificationError, InputError
from transient_queues.runner import IDENTITIES, OUTPUT_FORMATS, render, run_command
from transient_queues.utils.logging_utils import setup_logging

# Configure logger
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_CERTIFICATION_FAILED = 3


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", help="Path to the YAML model file.")
    parser.add_argument("--q", type=float, help="Rate of the exponential evaluation time e_q.")
    parser.add_argument("--t", type=float, help="Deterministic time; transforms are inverted numerically.")
    parser.add_argument("--initial", type=int, help="Initial state. Default: 0")
    parser.add_argument("--truncate", type=int, help="Truncation top level. Default: truncation.top from the config")
    parser.add_argument("--bottom", type=int, help="Truncation bottom for models without a reflection level.")
    parser.add_argument("--reps", type=int, help="Monte Carlo replications.")
    parser.add_argument("--seed", type=int, help="Random seed for simulation.")
    parser.add_argument("--format", choices=OUTPUT_FORMATS, help="Output format. Default: output.format from the config")
    parser.add_argument("--tol", type=float, help="Override the command's main tolerance.")
    parser.add_argument("--threads", type=int, help="Worker threads. Default: TQ_THREADS or the number of cores")
    parser.add_argument("--digits", type=int, help="Decimal digits requested from transform inversion.")
    parser.add_argument("--config", default=None, help="Path to the YAML configuration file. Default: config.yaml")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Set the logging level. Default: WARNING"
    )
    parser.add_argument(
        "--log-file",
        help="Path to the log file. If not provided, logs will only be written to standard error."
    )


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Args:
        args: Command-line arguments. If None, sys.argv[1:] is used.

    Returns:
        Parsed arguments.
    """
    parser = argparse.ArgumentParser(
        prog="tq",
        description="Transient analysis of queues at exponential and deterministic times."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    pmf = subparsers.add_parser("pmf", help="State probabilities of a birth-death, mms, mmsk or prp model.")
    _add_common_arguments(pmf)

    verify = subparsers.add_parser("verify", help="Check a factorization identity.")
    _add_common_arguments(verify)
    verify.add_argument("--identity", required=True, choices=IDENTITIES, help="Identity to check.")
    verify.add_argument("--level", type=int, help="Conditioning infimum level for theorem1. Default: 0")
    verify.add_argument("--x0", type=float, help="Initial level for rbm models.")

    rbm = subparsers.add_parser("rbm", help="Regulated Brownian motion density and survival on a grid.")
    _add_common_arguments(rbm)
    rbm.add_argument("--x0", type=float, help="Initial level. Default: x0 from the model file, else 0")
    rbm.add_argument("--grid", help="Grid start:stop:step. Default: 0:x0+5:0.1")

    moment = subparsers.add_parser("moment", help="Mean queue length.")
    _add_common_arguments(moment)

    simulate = subparsers.add_parser("simulate", help="Monte Carlo estimates with 99%% half-widths.")
    _add_common_arguments(simulate)
    simulate.add_argument("--x0", type=float, help="Initial level for rbm models.")
    simulate.add_argument("--grid", help="Histogram edges start:stop:step for rbm models.")

    oracle = subparsers.add_parser("oracle", help="Truncated-chain pmf by resolvent or uniformization.")
    _add_common_arguments(oracle)
    oracle.add_argument("--method", default="resolvent", choices=["resolvent", "uniformization"],
                        help="Oracle method. Default: resolvent")

    parsed = parser.parse_args(args)
    if parsed.command not in ("rbm",) and parsed.model is None:
        parser.error(f"'{parsed.command}' requires --model")
    return parsed


def setup_environment(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Set up logging, configuration and the thread count.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Dict containing the configuration, the thread count and the arguments.

    Raises:
        FileNotFoundError: If an explicitly named configuration file does not exist.
        ValueError: If the configuration or the thread count is invalid.
    """
    setup_logging(args.log_level, args.log_file)

    logger.info(f"Command: {args.command}")
    logger.info(f"Model file: {getattr(args, 'model', None)}")

    config = load_config(args.config)
    threads = resolve_threads(args.threads)
    logger.info(f"Using {threads} worker threads")

    return {
        "config": config,
        "threads": threads,
        "args": args
    }


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the `tq` command.

    Returns:
        Exit code (0 success, 1 failed verification, 2 input error,
        3 certification failure).
    """
    args = parse_args(argv)
    try:
        env = setup_environment(args)
        result = run_command(args, env["config"], env["threads"])
    except (InputError, ValueError, FileNotFoundError, yaml.YAMLError) as e:
        logger.error(f"Input error: {e}")
        print(f"tq: input error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except CertificationError as e:
        logger.error(f"Certification failure: {e}")
        print(f"tq: certification failure: {e}", file=sys.stderr)
        return EXIT_CERTIFICATION_FAILED

    sys.stdout.write(render(result))
    if not result.passed:
        logger.warning("Verification failed")
        return EXIT_VERIFICATION_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
