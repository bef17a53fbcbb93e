#!/usr/bin/env python3
"""Matrix generator - write test matrices to DDM1 files.

Three kinds of data:
  - uniform:   values uniform in [lo, hi] with 53 extra random mantissa bits
  - widerange: a random binary exponent range per row of A / column of B,
               magnitudes within [1e-60, 1e20]
  - illcond:   A = Q (orthogonal, from a DD Householder QR), B = Q^T C where C
               has entries of magnitude (t, 10t) plus one planted 1 per column

Every file written is reported with its SHA-256 content hash, so regenerating
with the same flags can be checked for bit-identical output.

Usage:
    # One 8x8 uniform matrix
    python3 scripts/matrix_gen.py --kind uniform --m 8 --n 8 --seed 7

    # Ill-conditioned 240^3 triple
    python3 scripts/matrix_gen.py --kind illcond --n 240 --t 1e-19 --seed 1 --out data/
"""

import argparse
import sys
from pathlib import Path
from typing import Dict

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from ddcascade.datagen import GenSpec, gen_uniform, illcond_operands, uniform_operands, widerange_operands
from ddcascade.matrix_io import write_matrix
from scripts.cli_common import EXIT_OK, EXIT_USAGE, standalone_main


DESCRIPTION = 'Generate uniform, wide-range or ill-conditioned test matrices'
EPILOG = """
Examples:
  # Single uniform matrix (uniform_s7.ddm)
  %(prog)s --kind uniform --m 8 --n 8 --lo -1 --hi 1 --seed 7

  # Uniform operand pair A (m x k), B (k x n)
  %(prog)s --kind uniform --m 64 --n 64 --k 64 --seed 3

  # Wide-range pair
  %(prog)s --kind widerange --m 240 --n 240 --k 240 --seed 2

  # Ill-conditioned triple (--n sets m = n = k)
  %(prog)s --kind illcond --n 240 --t 1e-19 --seed 1

Notes:
  - Files are written to --out (default: paths.output from the config)
  - The PRNG is PCG64; identical flags give identical files
  - illcond retries with seed + 1 if QR meets a zero column
"""


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--kind', required=True, choices=['uniform', 'widerange', 'illcond'],
                        help='Kind of data to generate')
    parser.add_argument('--m', type=int, default=None, help='Rows of A (default: --n)')
    parser.add_argument('--n', type=int, required=True, help='Columns of B')
    parser.add_argument('--k', type=int, default=None, help='Inner dimension')
    parser.add_argument('--seed', type=int, default=0, help='PRNG seed (default: 0)')
    parser.add_argument('--lo', type=float, default=-1.0, help='Uniform lower bound (default: -1)')
    parser.add_argument('--hi', type=float, default=1.0, help='Uniform upper bound (default: 1)')
    parser.add_argument('--t', type=float, default=None, help='illcond tolerance t')
    parser.add_argument('--out', type=str, default=None, help='Output directory')


def generate(args: argparse.Namespace) -> Dict[str, object]:
    """Build the matrices for the requested kind, keyed by file name."""
    m = args.m if args.m is not None else args.n
    if args.kind == 'uniform':
        spec = GenSpec('uniform', m, args.n, args.k, args.seed, lo=args.lo, hi=args.hi)
        if args.k is None:
            return {f'uniform_s{args.seed}.ddm': gen_uniform(spec)}
        A, B = uniform_operands(spec)
        return {'A.ddm': A, 'B.ddm': B}
    if args.kind == 'widerange':
        ops = widerange_operands(GenSpec('widerange', m, args.n, args.k, args.seed))
        return {'A.ddm': ops.A, 'B.ddm': ops.B}
    ops = illcond_operands(GenSpec('illcond', args.n, args.n, args.n, args.seed, tolerance=args.t))
    return {'A.ddm': ops.A, 'B.ddm': ops.B, 'C.ddm': ops.C}


def run(args: argparse.Namespace, config: Dict, logger) -> int:
    logger.info("=" * 60)
    logger.info("MATRIX GENERATION STARTED")
    logger.info("=" * 60)

    if args.kind == 'illcond' and args.t is None:
        logger.error("--kind illcond needs --t")
        return EXIT_USAGE

    out_dir = Path(args.out or config['paths']['output'])
    out_dir.mkdir(parents=True, exist_ok=True)

    logger.info(f"Kind: {args.kind}, seed: {args.seed}")
    matrices = generate(args)

    for name, M in matrices.items():
        path = out_dir / name
        digest = write_matrix(path, M)
        logger.info(f"Wrote {path} ({M.rows}x{M.cols})")
        print(f"{path} sha256={digest}")

    logger.info("=" * 60)
    logger.info("MATRIX GENERATION COMPLETED SUCCESSFULLY")
    logger.info("=" * 60)
    return EXIT_OK


def main(argv=None) -> int:
    """Main entry point."""
    return standalone_main('matrix_gen', DESCRIPTION, EPILOG, add_arguments, run, argv)


if __name__ == '__main__':
    sys.exit(main())
