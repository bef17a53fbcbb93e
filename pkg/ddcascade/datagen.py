"""Test-matrix generators: uniform, wide-range and ill-conditioned.

All randomness comes from ``numpy.random.PCG64`` seeded with the GenSpec seed,
so identical specs produce bit-identical matrices on every platform.

Example:
    >>> from ddcascade.datagen import GenSpec, gen_illcond
    >>> A, B, C = gen_illcond(GenSpec('illcond', m=64, n=64, k=64, seed=1, tolerance=1e-19))
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from ddcascade.bounds import dot_condition_matrix
from ddcascade.cascgemm import ddgemm_naive
from ddcascade.ddcore import add_parts, mul_parts, quick_two_sum, sub_parts, two_prod, two_sum
from ddcascade.exactref import MatrixDD


logger = logging.getLogger(__name__)

KINDS = ('uniform', 'widerange', 'illcond')
# 2**-199 > 1e-60 and 2**66 < 1e20
WIDE_EXP_MIN = -199
WIDE_EXP_MAX = 65
SIGN_CONVENTIONS = ('mixed', 'positive', 'negative')
MAX_QR_RETRIES = 8


class GenSpecError(ValueError):
    """Raised for an invalid generator specification."""
    pass


class QRBreakdownError(ArithmeticError):
    """Raised when Householder QR meets an exactly zero column."""
    pass


@dataclass(frozen=True)
class GenSpec:
    """What to generate.

    Attributes:
        kind: 'uniform', 'widerange' or 'illcond'
        m: Rows of A (or of the single uniform matrix)
        n: Columns of B (or of the single uniform matrix)
        k: Inner dimension (None: same as n)
        seed: Non-negative PRNG seed
        tolerance: Magnitude floor t of the planted C (illcond only)
        lo: Lower bound of the uniform range
        hi: Upper bound of the uniform range
    """

    kind: str
    m: int
    n: int
    k: Optional[int] = None
    seed: int = 0
    tolerance: Optional[float] = None
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GenSpecError(f"unknown kind {self.kind!r}, expected one of {', '.join(KINDS)}")
        if self.m < 1 or self.n < 1 or (self.k is not None and self.k < 1):
            raise GenSpecError(f"sizes must be positive, got m={self.m} n={self.n} k={self.k}")
        if self.seed < 0:
            raise GenSpecError(f"seed must be non-negative, got {self.seed}")
        if self.kind == 'uniform':
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
                raise GenSpecError(f"invalid uniform range [{self.lo}, {self.hi}]")
        if self.kind == 'illcond':
            if not (self.m == self.n == self.depth):
                raise GenSpecError(f"illcond needs m = n = k, got {self.m}, {self.n}, {self.depth}")
            if self.tolerance is None or not (self.tolerance > 0.0 and math.isfinite(self.tolerance)):
                raise GenSpecError(f"illcond needs a positive tolerance, got {self.tolerance!r}")

    @property
    def depth(self) -> int:
        return self.n if self.k is None else self.k


class WideRangeOperands(NamedTuple):
    A: MatrixDD
    B: MatrixDD
    row_ranges: np.ndarray
    col_ranges: np.ndarray


class IllCondOperands(NamedTuple):
    A: MatrixDD
    B: MatrixDD
    C: MatrixDD
    seed: int


def make_rng(seed: int) -> np.random.Generator:
    """The package PRNG: PCG64 seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def _extend_mantissa(rng: np.random.Generator, hi: np.ndarray,
                     lower: float, upper: float) -> Tuple[np.ndarray, np.ndarray]:
    """Attach 53 random bits below hi so that |lo| < ulp(hi) / 2.

    Elements sitting exactly on a range bound get their lo limb pointed
    inward so the DD value stays in [lower, upper].
    """
    ints = rng.integers(-(2 ** 53) + 1, 2 ** 53, size=hi.shape, dtype=np.int64).astype(np.float64)
    with np.errstate(under='ignore'):
        tail = ints * np.spacing(np.abs(hi)) * 2.0 ** -54
    tail = np.where(hi == 0.0, 0.0, tail)
    tail = np.where(hi == upper, -np.abs(tail), tail)
    tail = np.where(hi == lower, np.abs(tail), tail)
    tail = np.where((hi == lower) & (hi == upper), 0.0, tail)
    return two_sum(hi, tail)


def random_dd_values(rng: np.random.Generator, shape, emin: int = -300,
                     emax: int = 300) -> Tuple[np.ndarray, np.ndarray]:
    """Random signed DD limbs with binary exponents drawn from [emin, emax]."""
    mant = rng.uniform(1.0, 2.0, size=shape)
    mhi, mlo = _extend_mantissa(rng, mant, 1.0, 2.0)
    exps = rng.integers(emin, emax + 1, size=shape)
    sign = np.where(rng.integers(0, 2, size=shape) == 1, -1.0, 1.0)
    return sign * np.ldexp(mhi, exps), sign * np.ldexp(mlo, exps)


def _uniform_block(rng: np.random.Generator, shape: Tuple[int, int], lower: float, upper: float) -> MatrixDD:
    hi = rng.uniform(lower, upper, size=shape)
    s, e = _extend_mantissa(rng, hi, lower, upper)
    return MatrixDD(s, e)


def gen_uniform(spec: GenSpec) -> MatrixDD:
    """One m x n matrix, uniform in [lo, hi] with an extended mantissa.

    Raises:
        GenSpecError: If the spec is not a uniform spec
    """
    if spec.kind != 'uniform':
        raise GenSpecError(f"gen_uniform got a {spec.kind!r} spec")
    rng = make_rng(spec.seed)
    return _uniform_block(rng, (spec.m, spec.n), spec.lo, spec.hi)


def uniform_operands(spec: GenSpec) -> Tuple[MatrixDD, MatrixDD]:
    """A (m x k) then B (k x n), drawn from one stream."""
    if spec.kind != 'uniform':
        raise GenSpecError(f"uniform_operands got a {spec.kind!r} spec")
    rng = make_rng(spec.seed)
    A = _uniform_block(rng, (spec.m, spec.depth), spec.lo, spec.hi)
    B = _uniform_block(rng, (spec.depth, spec.n), spec.lo, spec.hi)
    return A, B


def _widerange_lines(rng: np.random.Generator, lines: int, length: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows of values, each row with its own exponent range and sign convention."""
    ranges = np.sort(rng.integers(WIDE_EXP_MIN, WIDE_EXP_MAX + 1, size=(lines, 2)), axis=1)
    conventions = rng.integers(0, len(SIGN_CONVENTIONS), size=lines)
    exps = rng.integers(ranges[:, :1], ranges[:, 1:] + 1, size=(lines, length))
    mant = rng.uniform(1.0, 2.0, size=(lines, length))
    mhi, mlo = _extend_mantissa(rng, mant, 1.0, 2.0)
    random_sign = np.where(rng.integers(0, 2, size=(lines, length)) == 1, -1.0, 1.0)
    sign = np.where(conventions[:, None] == 0, random_sign,
                    np.where(conventions[:, None] == 1, 1.0, -1.0))
    hi = sign * np.ldexp(mhi, exps)
    lo = sign * np.ldexp(mlo, exps)
    return hi, lo, ranges


def widerange_operands(spec: GenSpec) -> WideRangeOperands:
    """A and B with a random binary exponent range per row of A and column of B.

    Magnitudes lie in [2**e_min, 2**(e_max + 1)) for the line's range, inside
    [1e-60, 1e20].
    """
    if spec.kind != 'widerange':
        raise GenSpecError(f"widerange_operands got a {spec.kind!r} spec")
    rng = make_rng(spec.seed)
    a_hi, a_lo, row_ranges = _widerange_lines(rng, spec.m, spec.depth)
    b_hi, b_lo, col_ranges = _widerange_lines(rng, spec.n, spec.depth)
    A = MatrixDD(a_hi, a_lo)
    B = MatrixDD(b_hi.T.copy(), b_lo.T.copy())
    return WideRangeOperands(A, B, row_ranges, col_ranges)


def gen_widerange(spec: GenSpec) -> Tuple[MatrixDD, MatrixDD]:
    ops = widerange_operands(spec)
    return ops.A, ops.B


def _dd_div(ahi, alo, bhi, blo):
    """DD quotient (a / b), three-step long division."""
    q1 = ahi / bhi
    phi, plo = mul_parts(q1, 0.0 * q1, bhi, blo)
    rhi, rlo = sub_parts(ahi, alo, phi, plo)
    q2 = rhi / bhi
    phi, plo = mul_parts(q2, 0.0 * q2, bhi, blo)
    rhi, rlo = sub_parts(rhi, rlo, phi, plo)
    q3 = rhi / bhi
    q1, q2 = quick_two_sum(q1, q2)
    return add_parts(q1, q2, q3, 0.0 * q3)


def _dd_sqrt(ahi: float, alo: float) -> Tuple[float, float]:
    """DD square root of a nonnegative scalar (one Newton step from binary64)."""
    if ahi <= 0.0:
        return 0.0, 0.0
    x = 1.0 / math.sqrt(ahi)
    ax = ahi * x
    shi, slo = two_prod(ax, ax)
    dhi, _ = sub_parts(ahi, alo, shi, slo)
    return two_sum(ax, dhi * (x * 0.5))


def _dd_dot_columns(vhi, vlo, Mhi, Mlo):
    """v^T M in DD, one entry per column of M (summing rows in order)."""
    shi = np.zeros(Mhi.shape[1])
    slo = np.zeros(Mhi.shape[1])
    for i in range(Mhi.shape[0]):
        phi, plo = mul_parts(vhi[i], vlo[i], Mhi[i], Mlo[i])
        shi, slo = add_parts(shi, slo, phi, plo)
    return shi, slo


def _apply_reflector(vhi, vlo, chi, clo, Mhi, Mlo) -> None:
    """M -= v (c v^T M) in place, all in DD."""
    whi, wlo = _dd_dot_columns(vhi, vlo, Mhi, Mlo)
    uhi, ulo = mul_parts(whi, wlo, chi, clo)
    phi, plo = mul_parts(vhi[:, None], vlo[:, None], uhi[None, :], ulo[None, :])
    Mhi[...], Mlo[...] = sub_parts(Mhi, Mlo, phi, plo)


def householder_qr_dd(M: MatrixDD) -> MatrixDD:
    """Orthogonal factor Q of M = QR, computed with Householder reflectors in DD.

    A reflector is skipped when the part of its column below the diagonal is
    already zero, so a 1 x 1 input gives Q = [1].

    Raises:
        GenSpecError: If M is not square
        QRBreakdownError: If a column is exactly zero at its elimination step
    """
    n = M.rows
    if M.cols != n:
        raise GenSpecError(f"householder_qr_dd needs a square matrix, got {M.shape}")
    Rhi, Rlo = M.hi.copy(), M.lo.copy()
    reflectors = []
    for j in range(n):
        xhi, xlo = Rhi[j:, j].copy(), Rlo[j:, j].copy()
        if not np.any(xhi != 0.0):
            raise QRBreakdownError(f"column {j} is zero at elimination step {j}")
        if j == n - 1 or not np.any(xhi[1:] != 0.0):
            continue
        s2hi, s2lo = _dd_dot_columns(xhi, xlo, xhi[:, None], xlo[:, None])
        nhi, nlo = _dd_sqrt(float(s2hi[0]), float(s2lo[0]))
        sign = -1.0 if xhi[0] < 0.0 else 1.0
        # v = x - beta e1 with beta = -sign(x0) ||x||, no cancellation in v0
        xhi[0], xlo[0] = add_parts(float(xhi[0]), float(xlo[0]), sign * nhi, sign * nlo)
        vv_hi, vv_lo = _dd_dot_columns(xhi, xlo, xhi[:, None], xlo[:, None])
        chi, clo = _dd_div(2.0, 0.0, float(vv_hi[0]), float(vv_lo[0]))
        _apply_reflector(xhi, xlo, chi, clo, Rhi[j:, j:], Rlo[j:, j:])
        reflectors.append((j, xhi, xlo, chi, clo))

    Qhi, Qlo = np.eye(n), np.zeros((n, n))
    for j, vhi, vlo, chi, clo in reversed(reflectors):
        _apply_reflector(vhi, vlo, chi, clo, Qhi[j:, j:], Qlo[j:, j:])
    logger.debug(f"householder_qr_dd n={n}: {len(reflectors)} reflector(s)")
    return MatrixDD(Qhi, Qlo)


def _illcond_once(spec: GenSpec, seed: int) -> IllCondOperands:
    n = spec.n
    t = spec.tolerance
    rng = make_rng(seed)
    Q = householder_qr_dd(_uniform_block(rng, (n, n), -1.0, 1.0))

    mags = rng.uniform(t, 10.0 * t, size=(n, n))
    signs = np.where(rng.integers(0, 2, size=(n, n)) == 1, -1.0, 1.0)
    planted = rng.integers(0, n, size=n)
    c_hi = signs * mags
    c_hi[planted, np.arange(n)] = 1.0
    C = MatrixDD(c_hi, np.zeros((n, n)))

    B = ddgemm_naive(Q.transpose(), C)
    return IllCondOperands(Q, B, C, seed)


def illcond_operands(spec: GenSpec, max_retries: int = MAX_QR_RETRIES) -> IllCondOperands:
    """Ill-conditioned triple (A = Q, B = Q^T C, C), retrying seed + 1 on QR breakdown."""
    if spec.kind != 'illcond':
        raise GenSpecError(f"illcond_operands got a {spec.kind!r} spec")
    seed = spec.seed
    for attempt in range(max_retries + 1):
        try:
            return _illcond_once(spec, seed)
        except QRBreakdownError as e:
            logger.warning(f"QR breakdown with seed {seed} ({e}), retrying with seed {seed + 1}")
            seed += 1
    raise QRBreakdownError(f"QR broke down for {max_retries + 1} consecutive seeds from {spec.seed}")


def gen_illcond(spec: GenSpec) -> Tuple[MatrixDD, MatrixDD, MatrixDD]:
    """A = Q (orthogonal), B = Q^T C, and the planted target C.

    C has magnitudes in (t, 10t) with random signs plus exactly one entry
    equal to 1 in every column, so A B reproduces C only through heavy
    cancellation.
    """
    ops = illcond_operands(spec)
    return ops.A, ops.B, ops.C


def illcond_quality(A: MatrixDD, B: MatrixDD, C: MatrixDD) -> float:
    """Median condition number of the dot products behind non-planted entries."""
    cond = dot_condition_matrix(A, B)
    planted = (C.hi == 1.0) & (C.lo == 0.0)
    values = cond[~planted]
    return float(np.median(values)) if values.size else math.inf
