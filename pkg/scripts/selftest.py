#!/usr/bin/env python3
"""Selftest - run the numerical checks of the package and report pass/fail.

Checks:
  - dd arithmetic:          add/mul error against exact dyadic results
  - split reconstruction:   the four splits sum back to the input (exactly
                            up to the rounded tail)
  - error-free bins:        bins 0-2 equal the exact sums of their products
  - ten-product structure:  ten products per panel on both cascaded paths
  - path agreement:         simple and fused paths agree bit for bit, also
                            across column partitions
  - bound dominance:        cascaded dot error <= forward error bound
  - fp64x2 bound dominance: DD (naive) dot error <= its first-order bound,
                            on uniform and wide-range dots
  - accuracy vs fp64x2:     the cascaded product is at least as accurate as
                            the DD product in most random products
  - cancellation detection: zero bin 0 is flagged, positive data is not
  - ill-conditioned cancellation: on ill-conditioned suites the flags are
                            exactly the elements with a zero bin 0
  - dgemm correctness:      blocked dgemm equals the reference loop bitwise
  - file round-trip:        write -> read -> write is byte-identical

Trial counts come from the selftest.quick / selftest.full config sections.

Usage:
    python3 scripts/selftest.py --quick
    python3 scripts/selftest.py --full --verbose
"""

import argparse
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Tuple

import numpy as np
from tabulate import tabulate
from tqdm import tqdm

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from ddcascade.bounds import ErrorBoundInputs, cascaded_error_bound, fp64x2_error_bound, measured_dot_error
from ddcascade.cascade import SplitWidths, row_scales, select_widths, split_arrays
from ddcascade.cascgemm import (
    BIN_PRODUCTS,
    NUM_BINS,
    BinProduct,
    cascaded_dot,
    cascaded_gemm_fused,
    cascaded_gemm_simple,
    cascaded_panel_bins,
    ddgemm_naive,
)
from ddcascade.datagen import (
    GenSpec,
    gen_uniform,
    gen_widerange,
    illcond_operands,
    make_rng,
    random_dd_values,
    uniform_operands,
)
from ddcascade.ddcore import DD, add_parts, mul_parts
from ddcascade.dgemm import BlockingParams, dgemm, naive_blocked_gemm
from ddcascade.exactref import (
    Dyadic,
    MatrixDD,
    aligned_sum,
    componentwise_error,
    exact_gemm,
    exact_weighted_sum,
    ratio_to_float,
)
from ddcascade.logger import LogContext
from ddcascade.matrix_io import content_hash, decode_matrix, encode_matrix, read_matrix, write_matrix
from ddcascade.validators import is_normalized
from scripts.cli_common import EXIT_NUMERIC, EXIT_OK, standalone_main


DD_ADD_BOUND = 2.0 ** -104
DD_MUL_BOUND = 2.0 ** -102
SPLIT_DEPTHS = (1, 16, 64, 256)
ILLCOND_TOLERANCES = (1e-9, 1e-14, 1e-19)
ACCURACY_WIN_SHARE = 0.8

DESCRIPTION = 'Run the numerical self-checks'
EPILOG = """
Examples:
  # Reduced trial counts (default)
  %(prog)s --quick

  # Full trial counts with debug output
  %(prog)s --full --verbose

Notes:
  - Exit code 2 if any check fails
  - DDCASCADE_FAULT_BIN_ALIGN=1 deliberately breaks bin 2; the
    error-free bins check must then fail
"""


class CheckResult(NamedTuple):
    name: str
    passed: bool
    trials: int
    detail: str
    seconds: float


def add_arguments(parser: argparse.ArgumentParser) -> None:
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument('--quick', action='store_true', help='Reduced trial counts (default)')
    mode.add_argument('--full', action='store_true', help='Full trial counts')
    parser.add_argument('--seed', type=int, default=0, help='PRNG seed (default: 0)')
    parser.add_argument('--verbose', action='store_true', help='Log at DEBUG level while checking')


def check_dd_arithmetic(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    ahi, alo = random_dd_values(rng, trials, -200, 200)
    bhi, blo = random_dd_values(rng, trials, -200, 200)
    shi, slo = add_parts(ahi, alo, bhi, blo)
    phi, plo = mul_parts(ahi, alo, bhi, blo)
    if not (is_normalized(shi, slo).all() and is_normalized(phi, plo).all()):
        return False, "result limbs overlap"

    worst_add = worst_mul = 0.0
    for i in range(trials):
        a = Dyadic.from_dd(ahi[i], alo[i])
        b = Dyadic.from_dd(bhi[i], blo[i])
        exact_sum = a + b
        err = abs(Dyadic.from_dd(shi[i], slo[i]) - exact_sum)
        if exact_sum.is_zero():
            if not err.is_zero():
                return False, f"pair {i}: nonzero sum of cancelling operands"
        else:
            worst_add = max(worst_add, ratio_to_float(err, exact_sum))
        exact_prod = a * b
        err = abs(Dyadic.from_dd(phi[i], plo[i]) - exact_prod)
        worst_mul = max(worst_mul, ratio_to_float(err, exact_prod))

    ok = worst_add <= DD_ADD_BOUND and worst_mul <= DD_MUL_BOUND
    return ok, f"add {worst_add / 2.0 ** -106:.2f}u^2, mul {worst_mul / 2.0 ** -106:.2f}u^2"


def _row_within(num: np.ndarray, base: int, limit_exp: int) -> bool:
    """max |num| * 2**base <= 2**limit_exp, in integers."""
    biggest = max((abs(int(v)) for v in num), default=0)
    if base >= limit_exp:
        return (biggest << (base - limit_exp)) <= 1
    return biggest <= (1 << (limit_exp - base))


def check_split_reconstruction(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    rows = max(1, trials // len(SPLIT_DEPTHS))
    for k in SPLIT_DEPTHS:
        widths = select_widths(k)
        hi, lo = random_dd_values(rng, (rows, k), -30, 30)
        e = row_scales(hi, lo, axis=1)
        chi = split_arrays(hi, lo, e[:, None], widths)
        if np.max(np.abs(chi[0]), initial=0.0) > 1.0:
            return False, f"k={k}: |chi0| > 1"
        for s, bits in zip(chi[:3], (widths.c0, widths.c1, widths.c2)):
            scaled = np.ldexp(s, bits)
            if not np.array_equal(scaled, np.trunc(scaled)):
                return False, f"k={k}: a high split is off its {bits}-bit grid"
        ec = e[:, None]
        limbs = [hi, lo] + [-np.ldexp(s, ec + sigma) for s, sigma in zip(chi, widths.sigma_exponents)]
        num, base = aligned_sum(limbs, axis=1)
        for i in range(rows):
            # only the chi3 sum rounds: half an ulp of a value below 1
            if not _row_within(num[i], int(base[i]), int(e[i]) - widths.D2 - 52):
                return False, f"k={k}, row {i}: reconstruction error above the chi3 rounding"
    return True, f"depths {', '.join(map(str, SPLIT_DEPTHS))}"


def _reference_exponent(prod: BinProduct, widths: SplitWidths) -> int:
    return {'c1-c0': widths.c1 - widths.c0, 'c2-c0': widths.c2 - widths.c0}.get(prod.align, 0)


def _max_magnitude_panel(rng: np.random.Generator, shape: Tuple[int, int]) -> MatrixDD:
    """Every |hi| = 1 - 2**-53 (chi0 rounds up to 1), random signs, lo = +-2**-55."""
    top = 1.0 - 2.0 ** -53
    hi = np.where(rng.integers(0, 2, size=shape) == 1, -top, top)
    lo = np.where(rng.integers(0, 2, size=shape) == 1, -1.0, 1.0) * 2.0 ** -55
    return MatrixDD(hi, lo)


def check_error_free_bins(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    for t in range(trials):
        if t == 0:
            k = 256
            A = _max_magnitude_panel(rng, (6, k))
            B = _max_magnitude_panel(rng, (k, 5))
        else:
            k = int(rng.integers(1, 257))
            A = MatrixDD(*random_dd_values(rng, (6, k), -20, 20))
            B = MatrixDD(*random_dd_values(rng, (k, 5), -20, 20))
        widths = select_widths(k)
        bins, sa, sb = cascaded_panel_bins(A, B, widths)
        for b in range(NUM_BINS - 1):
            terms = [(_reference_exponent(p, widths), sa.splits[p.a], sb.splits[p.b])
                     for p in BIN_PRODUCTS if p.bin == b]
            if not exact_weighted_sum(terms).matches(bins.bins[b]).all():
                return False, f"panel {t} (k={k}): bin {b} is not the exact sum of its products"
    return True, "bins 0-2 exact (incl. max-magnitude panel)"


def check_ten_product_structure(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    per_bin = [sum(1 for p in BIN_PRODUCTS if p.bin == b) for b in range(NUM_BINS)]
    if len(BIN_PRODUCTS) != 10 or per_bin != [1, 2, 3, 4]:
        return False, f"product table has {len(BIN_PRODUCTS)} entries, per bin {per_bin}"
    m, n, kc = 10, 9, 8
    k = 2 * kc + 3
    A = gen_uniform(GenSpec('uniform', m, k, seed=int(rng.integers(1 << 31))))
    B = gen_uniform(GenSpec('uniform', k, n, seed=int(rng.integers(1 << 31))))
    params = BlockingParams(mc=16, nc=16, kc=kc)
    _, simple = cascaded_gemm_simple(A, B, params=params)
    _, fused = cascaded_gemm_fused(A, B, params=params)
    panels = -(-k // kc)
    tiles = -(-m // params.mr) * -(-n // params.nr)
    if simple.gemm_products != 10 * panels or fused.gemm_products != 10 * panels:
        return False, f"gemm products simple={simple.gemm_products} fused={fused.gemm_products}, expected {10 * panels}"
    if fused.microkernel_calls != 10 * panels * tiles:
        return False, f"fused microkernel calls {fused.microkernel_calls}, expected {10 * panels * tiles}"
    return True, f"10 x {panels} panels"


def check_path_agreement(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    for t in range(trials):
        m, n, k = (int(v) for v in rng.integers(1, 25, size=3))
        kc = int(rng.choice([4, 8, 16]))
        seed = int(rng.integers(1 << 31))
        A, B = _uniform_pair(m, n, k, seed)
        params = BlockingParams(mc=16, nc=16, kc=kc)
        Cs, rs = cascaded_gemm_simple(A, B, params=params)
        Cf, rf = cascaded_gemm_fused(A, B, params=params)
        Cp, rp = cascaded_gemm_fused(A, B, params=params, partitions=3)
        if not (Cs.bitwise_equal(Cf) and Cf.bitwise_equal(Cp)):
            return False, f"shape {m}x{k}x{n}, kc={kc}: paths disagree"
        if not (np.array_equal(rs.flagged_mask, rf.flagged_mask)
                and np.array_equal(rf.flagged_mask, rp.flagged_mask)):
            return False, f"shape {m}x{k}x{n}, kc={kc}: flags disagree"
    return True, "simple == fused == partitioned"


def _uniform_pair(m: int, n: int, k: int, seed: int) -> Tuple[MatrixDD, MatrixDD]:
    return uniform_operands(GenSpec('uniform', m, n, k, seed=seed))


def check_bound_dominance(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    k = 256
    widths = select_widths(k)
    worst = 0.0
    for t in range(trials):
        X = gen_uniform(GenSpec('uniform', 2, k, seed=int(rng.integers(1 << 31))))
        x = MatrixDD(X.hi[0][:, None], X.lo[0][:, None])
        y = MatrixDD(X.hi[1][:, None], X.lo[1][:, None])
        value, _ = cascaded_dot((X.hi[0], X.lo[0]), (X.hi[1], X.lo[1]), widths)
        bound = cascaded_error_bound(ErrorBoundInputs.from_vectors(x, y), widths)
        err = measured_dot_error(value, x, y)
        if err > bound:
            return False, f"dot {t}: error {err!r} exceeds bound {bound!r}"
        worst = max(worst, err / bound)
    return True, f"worst error/bound {worst:.3g}"


def check_fp64x2_bound_dominance(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    k = 64
    worst = 0.0
    for t in range(trials):
        seed = int(rng.integers(1 << 31))
        if t % 2:
            X, _ = gen_widerange(GenSpec('widerange', 2, 1, k=k, seed=seed))
        else:
            X = gen_uniform(GenSpec('uniform', 2, k, seed=seed))
        x = MatrixDD(X.hi[0][:, None], X.lo[0][:, None])
        y = MatrixDD(X.hi[1][:, None], X.lo[1][:, None])
        value = ddgemm_naive(x.transpose(), y)[0, 0]
        bound = fp64x2_error_bound(ErrorBoundInputs.from_vectors(x, y))
        err = measured_dot_error(value, x, y)
        if err > bound:
            return False, f"dot {t}: dd error {err!r} exceeds bound {bound!r}"
        if bound > 0.0:
            worst = max(worst, err / bound)
    return True, f"worst error/bound {worst:.3g}"


def check_accuracy_vs_fp64x2(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    wins = 0
    for t in range(trials):
        m, n = (int(v) for v in rng.integers(4, 17, size=2))
        k = int(rng.integers(64, 257))
        A, B = _uniform_pair(m, n, k, int(rng.integers(1 << 31)))
        exact = exact_gemm(A, B)
        cascaded, _ = cascaded_gemm_fused(A, B)
        cascaded_err = componentwise_error(cascaded, exact).max_rel_err
        naive_err = componentwise_error(ddgemm_naive(A, B), exact).max_rel_err
        # below 2**-104 both are at full DD precision
        wins += cascaded_err <= max(naive_err, DD_ADD_BOUND)
    needed = int(np.ceil(ACCURACY_WIN_SHARE * trials))
    return wins >= needed, f"cascaded at least as accurate in {wins}/{trials} products (need {needed})"


def _zero_bin0_reference(A: MatrixDD, B: MatrixDD, kc: int) -> Tuple[np.ndarray, List[int]]:
    mask = np.zeros((A.rows, B.cols), dtype=bool)
    counts = []
    for pc in range(0, A.cols, kc):
        pend = min(pc + kc, A.cols)
        bins, _, _ = cascaded_panel_bins(A.block(slice(None), slice(pc, pend)),
                                         B.block(slice(pc, pend), slice(None)),
                                         select_widths(pend - pc, k_max=kc))
        zero = bins.bin0 == 0.0
        mask |= zero
        counts.append(int(np.count_nonzero(zero)))
    return mask, counts


def check_illcond_cancellation(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    n, kc = 16, 8
    params = BlockingParams(mc=16, nc=16, kc=kc)
    flagged = 0
    for t in range(trials):
        tolerance = ILLCOND_TOLERANCES[t % len(ILLCOND_TOLERANCES)]
        ops = illcond_operands(GenSpec('illcond', n, n, seed=int(rng.integers(1 << 31)), tolerance=tolerance))
        mask, counts = _zero_bin0_reference(ops.A, ops.B, kc)
        for gemm in (cascaded_gemm_simple, cascaded_gemm_fused):
            _, report = gemm(ops.A, ops.B, params=params)
            if not np.array_equal(report.flagged_mask, mask) or report.panel_counts != counts:
                return False, (f"suite {t} (t={tolerance:g}), {gemm.__name__}: flags {report.flagged_count} "
                               f"vs {int(np.count_nonzero(mask))} zero bin-0 elements")
        flagged += int(np.count_nonzero(mask))
    return True, f"flags equal zero bin 0 in {trials} suite(s), {flagged} flagged"


def check_cancellation_detection(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    tiny = 2.0 ** -100
    value, flagged = cascaded_dot([DD(1.0, 0.0), DD(tiny, 0.0)], [DD(0.0, 0.0), DD(1.0, 0.0)])
    if not flagged or value != DD(tiny, 0.0):
        return False, f"worst-case dot gave {value}, flagged={flagged}"

    A = MatrixDD.from_float([[1.0, tiny], [1.0, 1.0]])
    B = MatrixDD.from_float([[0.0], [1.0]])
    for gemm in (cascaded_gemm_simple, cascaded_gemm_fused):
        C, report = gemm(A, B)
        if report.flagged != {(0, 0)} or C[0, 0] != DD(tiny, 0.0):
            return False, f"{gemm.__name__}: flagged {sorted(report.flagged)}"

    P = gen_uniform(GenSpec('uniform', 12, 12, seed=int(rng.integers(1 << 31)), lo=0.5, hi=1.0))
    _, report = cascaded_gemm_fused(P, P)
    if report.flagged_count:
        return False, f"{report.flagged_count} flag(s) on positive data"
    return True, "zero bin 0 flagged, positive data clean"


def check_dgemm_correctness(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    for t in range(trials):
        m, n, k = (int(v) for v in rng.integers(1, 41, size=3))
        kc = int(rng.choice([1, 5, 16, 256]))
        scale = 2.0 ** int(rng.integers(-3, 4))
        A = rng.uniform(-1.0, 1.0, size=(m, k))
        B = rng.uniform(-1.0, 1.0, size=(k, n))
        C0 = rng.uniform(-1.0, 1.0, size=(m, n))
        got = dgemm(A, B, C0.copy(), BlockingParams(mc=8, nc=12, kc=kc), scale=scale)
        want = naive_blocked_gemm(A, B, C0.copy(), kc=kc, scale=scale)
        if got.tobytes() != want.tobytes():
            return False, f"shape {m}x{k}x{n}, kc={kc}: blocked result differs"
    return True, "bitwise equal to reference loop"


def check_file_roundtrip(rng: np.random.Generator, trials: int) -> Tuple[bool, str]:
    hi, lo = random_dd_values(rng, (3, 4), -1000, 1000)
    hi[0, :4] = [0.0, -0.0, 5e-324, -1.7976931348623157e308]
    lo[0, :4] = 0.0
    M = MatrixDD(hi, lo)
    data = encode_matrix(M)
    if encode_matrix(decode_matrix(data)) != data:
        return False, "re-encoding changed the bytes"
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'roundtrip.ddm'
        digest = write_matrix(path, M)
        back = read_matrix(path)
    if not back.bitwise_equal(M) or digest != content_hash(back):
        return False, "file contents differ after reading back"
    return True, "byte-identical"


CHECKS: List[Tuple[str, Callable, str]] = [
    ('dd arithmetic', check_dd_arithmetic, 'dd_pairs'),
    ('split reconstruction', check_split_reconstruction, 'split_rows'),
    ('error-free bins', check_error_free_bins, 'bin_panels'),
    ('ten-product structure', check_ten_product_structure, None),
    ('path agreement', check_path_agreement, 'path_shapes'),
    ('bound dominance', check_bound_dominance, 'bound_dots'),
    ('fp64x2 bound dominance', check_fp64x2_bound_dominance, 'fp64x2_dots'),
    ('accuracy vs fp64x2', check_accuracy_vs_fp64x2, 'accuracy_shapes'),
    ('cancellation detection', check_cancellation_detection, None),
    ('ill-conditioned cancellation', check_illcond_cancellation, 'illcond_suites'),
    ('dgemm correctness', check_dgemm_correctness, 'dgemm_shapes'),
    ('file round-trip', check_file_roundtrip, None),
]


def run_checks(counts: Dict[str, int], seed: int, logger) -> List[CheckResult]:
    results = []
    for name, check, key in tqdm(CHECKS, desc='Checks', unit='check'):
        trials = counts[key] if key else 1
        rng = make_rng(seed)
        start = time.perf_counter()
        try:
            passed, detail = check(rng, trials)
        except Exception as e:
            logger.debug(f"{name} raised", exc_info=True)
            passed, detail = False, f"{type(e).__name__}: {e}"
        elapsed = time.perf_counter() - start
        (logger.info if passed else logger.error)(f"{name}: {'PASS' if passed else 'FAIL'} ({detail})")
        results.append(CheckResult(name, passed, trials, detail, elapsed))
    return results


def run(args: argparse.Namespace, config: Dict, logger) -> int:
    logger.info("=" * 60)
    logger.info("SELFTEST STARTED")
    logger.info("=" * 60)

    mode = 'full' if args.full else 'quick'
    counts = config['selftest'][mode]
    logger.info(f"Mode: {mode}, seed: {args.seed}")

    if args.verbose:
        with LogContext(logger, 'DEBUG'):
            results = run_checks(counts, args.seed, logger)
    else:
        results = run_checks(counts, args.seed, logger)

    table = [[r.name, 'PASS' if r.passed else 'FAIL', r.trials, f"{r.seconds:.2f}", r.detail] for r in results]
    print(tabulate(table, headers=['Check', 'Result', 'Trials', 'Time (s)', 'Detail'], tablefmt='simple'))

    failed = [r.name for r in results if not r.passed]
    logger.info("=" * 60)
    if failed:
        logger.error(f"SELFTEST FAILED: {', '.join(failed)}")
        logger.info("=" * 60)
        return EXIT_NUMERIC
    logger.info(f"SELFTEST PASSED ({len(results)} checks)")
    logger.info("=" * 60)
    return EXIT_OK


def main(argv=None) -> int:
    """Main entry point."""
    return standalone_main('selftest', DESCRIPTION, EPILOG, add_arguments, run, argv)


if __name__ == '__main__':
    sys.exit(main())
