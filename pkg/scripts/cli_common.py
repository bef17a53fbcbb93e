"""Shared plumbing for the command modules.

Exit codes, the argument parser that reports usage errors with exit code 1,
the common --config/--log-level flags, the multiplication method table and
the wrapper that maps library exceptions to exit codes.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from ddcascade.cascade import WidthError
from ddcascade.cascgemm import (
    CancellationReport,
    cascaded_gemm_fused,
    cascaded_gemm_simple,
    ddgemm_naive,
    f64_gemm,
)
from ddcascade.config_loader import ConfigError, blocking_params, get_config_value, load_config
from ddcascade.datagen import GenSpecError, QRBreakdownError
from ddcascade.ddcore import ScaleRangeError
from ddcascade.dgemm import BlockingParams
from ddcascade.exactref import MatrixDD
from ddcascade.logger import setup_logging
from ddcascade.matrix_io import MatrixFileError
from ddcascade.validators import ValidationError


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

METHODS = ('cascaded-fused', 'cascaded-simple', 'dd-naive', 'f64')
CASCADED_METHODS = ('cascaded-fused', 'cascaded-simple')


class CliArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', type=str, default=None,
                        help='Path to configuration file (default: config.yaml if present)')
    parser.add_argument('--log-level', type=str, default=None,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Override the configured log level')


def parse_csv_list(text: str, convert: Callable = str) -> list:
    """'a,b, c' -> ['a', 'b', 'c'] (converted)."""
    items = [item.strip() for item in text.split(',') if item.strip()]
    try:
        return [convert(item) for item in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid list {text!r}")


def method_list(text: str) -> list:
    methods = parse_csv_list(text)
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {', '.join(unknown) or '(none)'}; choose from {', '.join(METHODS)}")
    return methods


def size_list(text: str) -> list:
    sizes = parse_csv_list(text, int)
    if not sizes or any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError(f"sizes must be positive integers, got {text!r}")
    return sizes


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def add_threads_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--threads', type=positive_int, default=None,
                        help='Column partitions run concurrently (default: threads)')


def resolve_threads(config: Dict, threads: Optional[int] = None) -> int:
    return threads if threads is not None else config['threads']


def resolve_params(config: Dict, kc: Optional[int] = None) -> BlockingParams:
    params = blocking_params(config)
    if kc is not None:
        params = BlockingParams(params.mc, params.nc, kc, params.mr, params.nr)
    return params


def multiply(method: str, A: MatrixDD, B: MatrixDD, params: BlockingParams,
             threads: int = 1) -> Tuple[MatrixDD, Optional[CancellationReport]]:
    """Run one multiplication method; cascaded methods also return their report."""
    if method == 'cascaded-fused':
        return cascaded_gemm_fused(A, B, params=params, partitions=threads)
    if method == 'cascaded-simple':
        return cascaded_gemm_simple(A, B, params=params, partitions=threads)
    if method == 'dd-naive':
        return ddgemm_naive(A, B), None
    if method == 'f64':
        return f64_gemm(A, B, params), None
    raise ValidationError(f"unknown method {method!r}")


def execute(run: Callable, args: argparse.Namespace, config: Dict, logger) -> int:
    """Call run(args, config, logger) and map exceptions to exit codes."""
    try:
        return run(args, config, logger)
    except (MatrixFileError, OSError) as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except (ScaleRangeError, WidthError, QRBreakdownError) as e:
        logger.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except (ConfigError, GenSpecError, ValidationError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_USAGE


def load_command_config(args: argparse.Namespace) -> Dict:
    """Load config.yaml (required only when --config is given explicitly)."""
    path = args.config or 'config.yaml'
    config = load_config(path, required=args.config is not None)
    if getattr(args, 'log_level', None):
        config['logging']['level'] = args.log_level
    return config


def command_logger(name: str, config: Dict):
    return setup_logging(
        f'{name}.log',
        level=get_config_value(config, 'logging.level', 'INFO'),
        log_dir=get_config_value(config, 'logging.dir', 'logs'),
        retention_days=get_config_value(config, 'logging.retention_days', 30),
        console=get_config_value(config, 'logging.console', True),
    )


def standalone_main(name: str, description: str, epilog: str,
                    add_arguments: Callable, run: Callable, argv=None) -> int:
    """Entry point shared by the command modules when run directly."""
    parser = CliArgumentParser(
        prog=name,
        description=description,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=epilog,
    )
    add_common_arguments(parser)
    add_arguments(parser)
    args = parser.parse_args(argv)

    try:
        config = load_command_config(args)
    except ConfigError as e:
        print(f"ERROR: Failed to load configuration: {e}", file=sys.stderr)
        return EXIT_USAGE

    logger = command_logger(name, config)
    return execute(run, args, config, logger)
