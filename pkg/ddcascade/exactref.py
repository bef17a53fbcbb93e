"""Exact dyadic arithmetic and the exact reference GEMM.

Every binary64 and every double-double is a dyadic rational m * 2**e, so the
true product of two DD matrices is exactly computable with Python integers.
This module is the ground truth behind every accuracy claim in the package:

- ``Dyadic``: canonical sign/mantissa/exponent numbers with exact add/mul
- ``MatrixDD``: double-double matrices stored as two float64 arrays
- ``exact_gemm``: the exact product, returned as an ``ExactMatrix``
- ``componentwise_error``: per-element relative error against the oracle

Example:
    >>> from ddcascade.exactref import MatrixDD, exact_gemm, componentwise_error
    >>> exact = exact_gemm(A, B)
    >>> report = componentwise_error(C, exact)
    >>> print(report.max_rel_err)
"""

import logging
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from ddcascade.ddcore import DD, two_sum
from ddcascade.validators import (
    ShapeError,
    require_finite,
    require_inner_dims,
    require_normalized,
    require_same_shape,
)


logger = logging.getLogger(__name__)

_NO_EXP = np.iinfo(np.int64).max
_shift_left = np.frompyfunc(lambda m, s: int(m) << int(s), 2, 1)


def _scaled_equal(n, m, s) -> bool:
    """n == m * 2**s for integers n, m and shift s."""
    n, m, s = int(n), int(m), int(s)
    return n == (m << s) if s >= 0 else (n << -s) == m


_equal_scaled = np.frompyfunc(_scaled_equal, 3, 1)


@total_ordering
@dataclass(frozen=True)
class Dyadic:
    """Exact value sign * mantissa * 2**exponent in canonical form.

    Canonical means the mantissa is odd, or the value is zero with
    sign = mantissa = exponent = 0, so equal values compare equal as records.
    """

    sign: int
    mantissa: int
    exponent: int

    def __post_init__(self):
        if self.mantissa == 0:
            if self.sign != 0 or self.exponent != 0:
                raise ValueError("zero must be Dyadic(0, 0, 0)")
        elif self.sign not in (-1, 1) or self.mantissa < 0 or self.mantissa & 1 == 0:
            raise ValueError(f"non-canonical dyadic {self.sign}, {self.mantissa}, {self.exponent}")

    @classmethod
    def from_int(cls, n: int, exponent: int = 0) -> 'Dyadic':
        """Canonicalize n * 2**exponent."""
        if n == 0:
            return _ZERO
        tz = (n & -n).bit_length() - 1
        return cls(1 if n > 0 else -1, abs(n) >> tz, exponent + tz)

    @classmethod
    def from_float(cls, x: float) -> 'Dyadic':
        """Lossless conversion of a finite binary64."""
        require_finite(x, 'x')
        num, den = float(x).as_integer_ratio()
        return cls.from_int(num, -(den.bit_length() - 1))

    @classmethod
    def from_dd(cls, hi: float, lo: float) -> 'Dyadic':
        return dyadic_add(cls.from_float(hi), cls.from_float(lo))

    @property
    def signed(self) -> int:
        return self.sign * self.mantissa

    def is_zero(self) -> bool:
        return self.sign == 0

    def __add__(self, other: 'Dyadic') -> 'Dyadic':
        return dyadic_add(self, other)

    def __sub__(self, other: 'Dyadic') -> 'Dyadic':
        return dyadic_add(self, -other)

    def __mul__(self, other: 'Dyadic') -> 'Dyadic':
        return dyadic_mul(self, other)

    def __neg__(self) -> 'Dyadic':
        if self.sign == 0:
            return self
        return Dyadic(-self.sign, self.mantissa, self.exponent)

    def __abs__(self) -> 'Dyadic':
        return self if self.sign >= 0 else -self

    def __lt__(self, other: 'Dyadic') -> bool:
        return (self - other).sign < 0

    def to_float(self) -> float:
        """Nearest binary64 (round half to even)."""
        if self.exponent >= 0:
            return float(self.signed << self.exponent)
        return self.signed / (1 << -self.exponent)

    def to_dd(self) -> DD:
        """Nearest hi, then nearest lo of the remainder."""
        hi = self.to_float()
        lo = (self - Dyadic.from_float(hi)).to_float()
        s, e = two_sum(hi, lo)
        return DD(s, e)


_ZERO = Dyadic(0, 0, 0)


def dyadic_add(a: Dyadic, b: Dyadic) -> Dyadic:
    """Exact sum of two dyadic numbers."""
    if a.sign == 0:
        return b
    if b.sign == 0:
        return a
    e = min(a.exponent, b.exponent)
    n = (a.signed << (a.exponent - e)) + (b.signed << (b.exponent - e))
    return Dyadic.from_int(n, e)


def dyadic_mul(a: Dyadic, b: Dyadic) -> Dyadic:
    """Exact product of two dyadic numbers."""
    if a.sign == 0 or b.sign == 0:
        return _ZERO
    # odd * odd stays odd, so the record is already canonical
    return Dyadic(a.sign * b.sign, a.mantissa * b.mantissa, a.exponent + b.exponent)


def ratio_to_float(num: Dyadic, den: Dyadic) -> float:
    """|num| / |den| rounded once to binary64."""
    n, d = num.mantissa, den.mantissa
    shift = num.exponent - den.exponent
    if shift >= 0:
        n <<= shift
    else:
        d <<= -shift
    return n / d


@dataclass
class MatrixDD:
    """A double-double matrix stored as two same-shape float64 arrays.

    Entry (i, j) is hi[i, j] + lo[i, j]. Rows are contiguous (row-major), and
    every entry is finite with non-overlapping limbs.
    """

    hi: np.ndarray
    lo: np.ndarray

    def __post_init__(self):
        self.hi = np.asarray(self.hi, dtype=np.float64)
        self.lo = np.asarray(self.lo, dtype=np.float64)
        if self.hi.ndim != 2:
            raise ShapeError(f"MatrixDD needs 2-D limbs, got {self.hi.ndim}-D")
        require_same_shape(self.hi.shape, self.lo.shape, 'hi/lo limbs')

    @classmethod
    def zeros(cls, rows: int, cols: int) -> 'MatrixDD':
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> 'MatrixDD':
        return cls(np.eye(n), np.zeros((n, n)))

    @classmethod
    def from_float(cls, values) -> 'MatrixDD':
        """Promote a binary64 matrix (lo = 0)."""
        values = np.array(values, dtype=np.float64, ndmin=2)
        require_finite(values, 'matrix')
        return cls(values, np.zeros_like(values))

    @classmethod
    def from_parts(cls, hi, lo) -> 'MatrixDD':
        """Renormalize arbitrary finite parts into a valid MatrixDD."""
        hi = np.array(hi, dtype=np.float64, ndmin=2)
        lo = np.array(lo, dtype=np.float64, ndmin=2)
        require_finite(hi, 'hi')
        require_finite(lo, 'lo')
        s, e = two_sum(hi, lo)
        return cls(s, e)

    @property
    def rows(self) -> int:
        return self.hi.shape[0]

    @property
    def cols(self) -> int:
        return self.hi.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.hi.shape

    def __getitem__(self, index: Tuple[int, int]) -> DD:
        i, j = index
        return DD(float(self.hi[i, j]), float(self.lo[i, j]))

    def block(self, rows: slice, cols: slice) -> 'MatrixDD':
        """View of a sub-block (no copy)."""
        return MatrixDD(self.hi[rows, cols], self.lo[rows, cols])

    def transpose(self) -> 'MatrixDD':
        return MatrixDD(self.hi.T.copy(), self.lo.T.copy())

    def copy(self) -> 'MatrixDD':
        return MatrixDD(self.hi.copy(), self.lo.copy())

    def validate(self, what: str = 'matrix') -> None:
        """Check finiteness and non-overlap.

        Raises:
            NonFiniteError: On NaN/Inf
            NormalizationError: On overlapping limbs
        """
        require_finite(self.hi, f"{what}.hi")
        require_finite(self.lo, f"{what}.lo")
        require_normalized(self.hi, self.lo, what)

    def bitwise_equal(self, other: 'MatrixDD') -> bool:
        return (self.hi.tobytes() == np.ascontiguousarray(other.hi).tobytes()
                and np.ascontiguousarray(self.lo).tobytes() == np.ascontiguousarray(other.lo).tobytes())


@dataclass
class ExactMatrix:
    """Exact matrix of dyadic values with shared exponents.

    Entry (i, j) equals num[i, j] * 2**(row_exp[i] + col_exp[j]) where num
    holds Python integers (object array).
    """

    num: np.ndarray
    row_exp: np.ndarray
    col_exp: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.num.shape

    def entry(self, i: int, j: int) -> Dyadic:
        return Dyadic.from_int(int(self.num[i, j]), int(self.row_exp[i]) + int(self.col_exp[j]))

    def rows_as_dyadic(self) -> List[List[Dyadic]]:
        m, n = self.shape
        return [[self.entry(i, j) for j in range(n)] for i in range(m)]

    def matches(self, values: np.ndarray) -> np.ndarray:
        """Exact elementwise equality against a binary64 matrix."""
        values = np.asarray(values, dtype=np.float64)
        require_same_shape(values.shape, self.shape, 'exact comparison')
        require_finite(values, 'values')
        mant, exp = _int_limbs(values)
        total = self.row_exp[:, None] + self.col_exp[None, :]
        shift = np.where(mant != 0, exp - total, 0)
        return _equal_scaled(self.num, mant, shift).astype(bool)

    def to_dd(self) -> MatrixDD:
        """Round every entry to the nearest DD."""
        m, n = self.shape
        hi = np.zeros((m, n))
        lo = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                hi[i, j], lo[i, j] = self.entry(i, j).to_dd()
        return MatrixDD(hi, lo)


def _int_limbs(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split binary64 values into integer mantissas and exponents: x = m * 2**e."""
    f, e = np.frexp(x)
    mant = np.ldexp(f, 53).astype(np.int64)
    exp = e.astype(np.int64) - 53
    return mant, np.where(mant != 0, exp, _NO_EXP)


def aligned_sum(limbs: Sequence[np.ndarray], axis: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Exact elementwise sum of binary64 arrays as integers with a shared exponent.

    All elements of a row (axis=1) or of a column (axis=0) share one exponent.

    Returns:
        Tuple (num, base) where sum(limbs) == num * 2**base along the axis
    """
    parts = [_int_limbs(np.asarray(limb, dtype=np.float64)) for limb in limbs]
    base = np.minimum.reduce([np.min(exp, axis=axis, initial=_NO_EXP) for _, exp in parts])
    base = np.where(base == _NO_EXP, 0, base)
    base_b = np.expand_dims(base, axis)
    num = None
    for mant, exp in parts:
        shift = np.where(mant != 0, exp - base_b, 0)
        term = _shift_left(mant, shift)
        num = term if num is None else num + term
    return num, base


def exact_matmul_f64(A: np.ndarray, B: np.ndarray) -> ExactMatrix:
    """Exact product of two binary64 matrices.

    Raises:
        ShapeError: If inner dimensions differ
        NonFiniteError: On NaN/Inf
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    require_inner_dims(A.shape, B.shape)
    require_finite(A, 'A')
    require_finite(B, 'B')
    return _exact_product([A], [B])


def _exact_product(a_limbs: Sequence[np.ndarray], b_limbs: Sequence[np.ndarray]) -> ExactMatrix:
    a_num, a_exp = aligned_sum(a_limbs, axis=1)
    b_num, b_exp = aligned_sum(b_limbs, axis=0)
    m, n = a_num.shape[0], b_num.shape[1]
    if a_num.shape[1] == 0:
        num = np.empty((m, n), dtype=object)
        num.fill(0)
    else:
        num = a_num.dot(b_num)
    return ExactMatrix(num, a_exp, b_exp)


def exact_weighted_sum(terms: Iterable[Tuple[int, np.ndarray, np.ndarray]]) -> ExactMatrix:
    """Exact value of sum(2**s * A_t @ B_t) over (s, A_t, B_t) terms.

    The terms are concatenated along the inner dimension so one exact GEMM
    produces the whole sum.
    """
    a_blocks, b_blocks = [], []
    for s, A, B in terms:
        A = np.asarray(A, dtype=np.float64)
        B = np.asarray(B, dtype=np.float64)
        require_inner_dims(A.shape, B.shape)
        a_blocks.append(np.ldexp(A, s))
        b_blocks.append(B)
    return exact_matmul_f64(np.hstack(a_blocks), np.vstack(b_blocks))


def exact_gemm(A: MatrixDD, B: MatrixDD) -> ExactMatrix:
    """Mathematically exact product of two DD matrices.

    Args:
        A: m x k matrix
        B: k x n matrix

    Returns:
        ExactMatrix holding every sum_p A[i,p] * B[p,j] exactly

    Raises:
        ShapeError: If inner dimensions differ
    """
    require_inner_dims(A.shape, B.shape)
    A.validate('A')
    B.validate('B')
    logger.debug(f"exact_gemm {A.rows}x{A.cols} * {B.rows}x{B.cols}")
    return _exact_product([A.hi, A.lo], [B.hi, B.lo])


def naive_exact_gemm(A: MatrixDD, B: MatrixDD) -> List[List[Dyadic]]:
    """Independent oracle: triple loop over Dyadic objects."""
    require_inner_dims(A.shape, B.shape)
    out = []
    for i in range(A.rows):
        row = []
        for j in range(B.cols):
            acc = _ZERO
            for p in range(A.cols):
                a = Dyadic.from_dd(*A[i, p])
                b = Dyadic.from_dd(*B[p, j])
                acc = dyadic_add(acc, dyadic_mul(a, b))
            row.append(acc)
        out.append(row)
    return out


@dataclass
class ErrorReport:
    """Per-element error of a computed matrix against the exact product.

    ``rel_err`` holds |computed - exact| / |exact|, except where the exact
    value is zero: there it holds the absolute error and ``zero_exact`` is set.
    The summary statistics exclude those tagged elements.
    """

    rel_err: np.ndarray
    zero_exact: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.zero_exact is None:
            self.zero_exact = np.zeros(self.rel_err.shape, dtype=bool)

    @property
    def zero_exact_count(self) -> int:
        return int(np.count_nonzero(self.zero_exact))

    @property
    def max_rel_err(self) -> float:
        vals = self.rel_err[~self.zero_exact]
        return float(vals.max()) if vals.size else 0.0

    @property
    def mean_rel_err(self) -> float:
        vals = self.rel_err[~self.zero_exact]
        return float(vals.mean()) if vals.size else 0.0

    @property
    def max_abs_err_at_zero(self) -> float:
        vals = self.rel_err[self.zero_exact]
        return float(vals.max()) if vals.size else 0.0

    def sorted_errors(self) -> np.ndarray:
        return np.sort(self.rel_err[~self.zero_exact].ravel())


def componentwise_error(computed: MatrixDD, exact: ExactMatrix) -> ErrorReport:
    """Relative error of each computed entry, evaluated exactly.

    The difference computed - exact is formed in dyadic arithmetic and only
    the final quotient is rounded to binary64.

    Raises:
        ShapeError: If shapes differ
    """
    require_same_shape(computed.shape, exact.shape, 'componentwise_error')
    m, n = computed.shape
    rel = np.zeros((m, n))
    zero = np.zeros((m, n), dtype=bool)
    c_num, c_exp = aligned_sum([computed.hi, computed.lo], axis=1)
    for i in range(m):
        for j in range(n):
            x = exact.entry(i, j)
            c = Dyadic.from_int(int(c_num[i, j]), int(c_exp[i]))
            d = dyadic_add(c, -x)
            if x.is_zero():
                zero[i, j] = True
                rel[i, j] = abs(d).to_float()
            elif not d.is_zero():
                rel[i, j] = ratio_to_float(d, x)
    return ErrorReport(rel, zero)
