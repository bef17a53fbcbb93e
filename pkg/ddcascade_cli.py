#!/usr/bin/env python3
"""ddcascade - cascaded double-double GEMM experiments.

Subcommands:
  gen        Generate uniform, wide-range or ill-conditioned matrices
  multiply   Multiply two matrix files with a chosen method
  accuracy   Componentwise error of each method against the exact product
  bench      Median timings and effective GFLOPS
  selftest   Numerical self-checks

Exit codes: 0 ok, 1 usage/config error, 2 numeric failure, 3 I/O error.

Usage:
    python3 ddcascade_cli.py gen --kind uniform --m 8 --n 8 --seed 7
    python3 ddcascade_cli.py multiply --a A.ddm --b B.ddm --out C.ddm
    python3 ddcascade_cli.py selftest --quick
"""

import argparse
import sys

from ddcascade import __version__
from ddcascade.config_loader import ConfigError
from scripts import accuracy_report, gemm_bench, matrix_gen, matrix_multiply, selftest
from scripts.cli_common import (
    EXIT_USAGE,
    CliArgumentParser,
    add_common_arguments,
    command_logger,
    execute,
    load_command_config,
)


COMMANDS = {
    'gen': matrix_gen,
    'multiply': matrix_multiply,
    'accuracy': accuracy_report,
    'bench': gemm_bench,
    'selftest': selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(
        prog='ddcascade',
        description='Cascaded FP64x2 GEMM: generation, multiplication, accuracy and timing',
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=CliArgumentParser)
    subparsers.required = True

    for name, module in COMMANDS.items():
        sub = subparsers.add_parser(
            name,
            help=module.DESCRIPTION,
            description=module.DESCRIPTION,
            epilog=module.EPILOG,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        add_common_arguments(sub)
        module.add_arguments(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_command_config(args)
    except ConfigError as e:
        print(f"ERROR: Failed to load configuration: {e}", file=sys.stderr)
        return EXIT_USAGE

    logger = command_logger(f'ddcascade_{args.command}', config)
    return execute(COMMANDS[args.command].run, args, config, logger)


if __name__ == '__main__':
    sys.exit(main())
