"""Operand cascading: split-width selection, power-of-two scaling and the
branch-free four-way split of double-double values.

A DD value x, scaled by 2**-e so that |x * 2**-e| <= 1, is written as

    x * 2**-e = chi0 + chi1 * 2**-D0 + chi2 * 2**-D1 + chi3 * 2**-D2

where chi0..chi2 carry c0, c1, c2 fixed-point bits and chi3 carries the
(rounded) tail. Each limb is split with the add/subtract trick
(x + K) - K, and the limb splits are summed; only the tail sum rounds.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from ddcascade.ddcore import DD, add_parts, scale_pow2_parts
from ddcascade.exactref import MatrixDD
from ddcascade.validators import require_finite


logger = logging.getLogger(__name__)

MANTISSA_BITS = 53
DEFAULT_K_MAX = 256


class WidthError(ValueError):
    """Raised when a panel depth leaves no valid split widths."""
    pass


@dataclass(frozen=True)
class SplitWidths:
    """Bit budget of the four splits for a rank-k panel."""

    k: int
    c0: int
    c1: int
    c2: int
    c3: int = MANTISSA_BITS

    @property
    def D0(self) -> int:
        return self.c0

    @property
    def D1(self) -> int:
        return self.c0 + self.c1

    @property
    def D2(self) -> int:
        return self.c0 + self.c1 + self.c2

    @property
    def log2k(self) -> int:
        return (self.k - 1).bit_length()

    @property
    def sigma_exponents(self) -> Tuple[int, int, int, int]:
        """Exponents of the split weights 1, sigma1, sigma2, sigma3."""
        return 0, -self.D0, -self.D1, -self.D2

    @property
    def eps_cascaded(self) -> float:
        return 2.0 ** -(self.D2 + MANTISSA_BITS)

    @property
    def rounding_constants(self) -> Tuple[float, float, float]:
        """(x + K) - K keeps d fraction bits of |x| <= 1 when K = 1.5 * 2**(52 - d)."""
        return tuple(1.5 * 2.0 ** (MANTISSA_BITS - 1 - d) for d in (self.c0, self.c1, self.c2))

    def check(self) -> None:
        """Verify the bin budgets.

        Raises:
            WidthError: If any budget is violated
        """
        L = self.log2k
        problems = []
        if min(self.c0, self.c1, self.c2) < 1:
            problems.append("every high split needs at least one bit")
        if 2 * self.c0 + L > MANTISSA_BITS:
            problems.append("bin 0 exceeds 53 bits")
        if self.c0 + self.c1 + L + 1 > MANTISSA_BITS or 2 * self.c1 + L + 2 > MANTISSA_BITS:
            problems.append("bin 1/2 exceeds 53 bits")
        if self.c0 + self.c2 + L + 2 > MANTISSA_BITS:
            problems.append("bin 2 exceeds 53 bits")
        if self.D2 + MANTISSA_BITS < 106:
            problems.append(f"cascaded precision {self.D2 + MANTISSA_BITS} bits is below 106")
        if problems:
            raise WidthError(f"k={self.k}: " + "; ".join(problems))


def select_widths(k: int, k_max: int = DEFAULT_K_MAX) -> SplitWidths:
    """Greedy widths for depth k: largest c0, then c1, then c2.

    Args:
        k: Inner depth of the panel (1 <= k <= k_max)
        k_max: Blocking depth kC

    Returns:
        SplitWidths satisfying every bin budget

    Raises:
        WidthError: If k is out of range or no valid widths exist

    Example:
        >>> w = select_widths(256)
        >>> (w.c0, w.c1, w.c2, w.D2)
        (22, 21, 21, 64)
    """
    if k < 1 or k > k_max:
        raise WidthError(f"panel depth {k} outside [1, {k_max}]")
    L = (k - 1).bit_length()
    c0 = (MANTISSA_BITS - L) // 2
    c1 = min(MANTISSA_BITS - L - 1 - c0, (MANTISSA_BITS - 2 - L) // 2)
    c2 = MANTISSA_BITS - L - 2 - c0
    widths = SplitWidths(k, c0, c1, c2)
    widths.check()
    return widths


@dataclass
class ScaleVector:
    """Per-row (A) or per-column (B) scale exponents; sigma = 2**e."""

    exponents: np.ndarray

    def __post_init__(self):
        self.exponents = np.asarray(self.exponents, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.exponents)

    def sigmas(self) -> np.ndarray:
        return np.ldexp(1.0, self.exponents)


@dataclass
class SplitPanelA:
    """A row panel of A cascaded into A0..A3 with per-row scales."""

    splits: Tuple[np.ndarray, ...]
    scale: ScaleVector
    widths: SplitWidths

    @property
    def m(self) -> int:
        return self.splits[0].shape[0]

    @property
    def k(self) -> int:
        return self.splits[0].shape[1]


@dataclass
class SplitPanelB:
    """A column panel of B cascaded into B0..B3 plus the derived B4..B6."""

    splits: Tuple[np.ndarray, ...]
    scale: ScaleVector
    widths: SplitWidths

    @property
    def k(self) -> int:
        return self.splits[0].shape[0]

    @property
    def n(self) -> int:
        return self.splits[0].shape[1]


def row_scales(hi: np.ndarray, lo: np.ndarray, axis: int = 1) -> np.ndarray:
    """Scale exponents along rows (axis=1) or columns (axis=0).

    e satisfies 2**(e-1) <= max|hi| < 2**e, lowered by one when the maximum
    is an exact power of two and every element reaching it has a lo limb of
    opposite sign (the true magnitude then sits just below 2**(e-1)).
    All-zero lines get e = 0.
    """
    hi = np.asarray(hi, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    mag = np.abs(hi)
    absmax = np.max(mag, axis=axis, initial=0.0)
    frac, e = np.frexp(absmax)
    e = e.astype(np.int64)

    at_max = mag == np.expand_dims(absmax, axis)
    opposite = (lo * np.sign(hi)) < 0.0
    all_below = np.all(~at_max | opposite, axis=axis)
    lower = (frac == 0.5) & all_below
    return np.where(lower, e - 1, e)


def row_scale(values: Sequence[DD]) -> int:
    """Scale exponent of one row of DD values.

    Example:
        >>> row_scale([DD(0.75, 0.0), DD(-3.5, 0.0)])
        2
    """
    if len(values) == 0:
        raise WidthError("row_scale needs a non-empty row")
    hi = np.array([[v.hi for v in values]])
    lo = np.array([[v.lo for v in values]])
    return int(row_scales(hi, lo, axis=1)[0])


def _split_limb(x: np.ndarray, consts: Tuple[float, float, float], widths: SplitWidths) -> List[np.ndarray]:
    k0, k1, k2 = consts
    s0 = (x + k0) - k0
    x = np.ldexp(x - s0, widths.c0)
    s1 = (x + k1) - k1
    x = np.ldexp(x - s1, widths.c1)
    s2 = (x + k2) - k2
    s3 = np.ldexp(x - s2, widths.c2)
    return [s0, s1, s2, s3]


def split_arrays(hi: np.ndarray, lo: np.ndarray, exponents: np.ndarray,
                 widths: SplitWidths) -> List[np.ndarray]:
    """Cascade DD values (given by limbs) into four binary64 arrays.

    Args:
        hi: High limbs
        lo: Low limbs
        exponents: Scale exponents, broadcastable against hi
        widths: Split widths of the panel

    Returns:
        [chi0, chi1, chi2, chi3] arrays shaped like hi
    """
    hi = np.asarray(hi, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    exponents = np.asarray(exponents, dtype=np.int64)
    consts = widths.rounding_constants
    with np.errstate(under='ignore'):
        xh = np.ldexp(hi, -exponents)
        xl = np.ldexp(lo, -exponents)
    parts_hi = _split_limb(xh, consts, widths)
    parts_lo = _split_limb(xl, consts, widths)
    return [h + l for h, l in zip(parts_hi, parts_lo)]


def split_scalar(x: DD, e: int, widths: SplitWidths) -> Tuple[float, float, float, float]:
    """Cascade one DD value at scale 2**e.

    Raises:
        NonFiniteError: If x is NaN or infinite

    Example:
        >>> split_scalar(DD(1.0, 0.0), 1, select_widths(256))
        (0.5, 0.0, 0.0, 0.0)
    """
    require_finite([x.hi, x.lo], 'x')
    parts = split_arrays(np.array(x.hi), np.array(x.lo), np.array(e), widths)
    return tuple(float(p) for p in parts)


def _check_depth(k: int, widths: SplitWidths) -> None:
    if k > widths.k:
        raise WidthError(f"panel depth {k} exceeds split widths chosen for k={widths.k}")


def split_panel_a(A: MatrixDD, widths: SplitWidths) -> SplitPanelA:
    """Cascade a row panel of A (m x k), one scale per row."""
    _check_depth(A.cols, widths)
    A.validate('A panel')
    exponents = row_scales(A.hi, A.lo, axis=1)
    splits = split_arrays(A.hi, A.lo, exponents[:, None], widths)
    return SplitPanelA(tuple(splits), ScaleVector(exponents), widths)


def derived_b_splits(b0: np.ndarray, b1: np.ndarray, b2: np.ndarray, b3: np.ndarray,
                     widths: SplitWidths) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """B4, B5, B6 in binary64 (these may round; they only feed bin 3-6)."""
    b4 = b2 + np.ldexp(b3, -widths.c2)
    b5 = (b1 + np.ldexp(b2, -widths.c1)) + np.ldexp(b3, -(widths.c1 + widths.c2))
    b6 = ((b0 + np.ldexp(b1, -widths.D0)) + np.ldexp(b2, -widths.D1)) + np.ldexp(b3, -widths.D2)
    return b4, b5, b6


def split_panel_b(B: MatrixDD, widths: SplitWidths) -> SplitPanelB:
    """Cascade a column panel of B (k x n), one scale per column."""
    _check_depth(B.rows, widths)
    B.validate('B panel')
    exponents = row_scales(B.hi, B.lo, axis=0)
    b0, b1, b2, b3 = split_arrays(B.hi, B.lo, exponents[None, :], widths)
    b4, b5, b6 = derived_b_splits(b0, b1, b2, b3, widths)
    return SplitPanelB((b0, b1, b2, b3, b4, b5, b6), ScaleVector(exponents), widths)


def reconstruct(panel: Union[SplitPanelA, SplitPanelB]) -> MatrixDD:
    """2**e * (S0 + sigma1 S1 + sigma2 S2 + sigma3 S3) in DD arithmetic."""
    w = panel.widths
    s = panel.splits
    zeros = np.zeros_like(s[0])
    hi, lo = np.ldexp(s[3], -w.D2), zeros
    hi, lo = add_parts(hi, lo, np.ldexp(s[2], -w.D1), zeros)
    hi, lo = add_parts(hi, lo, np.ldexp(s[1], -w.D0), zeros)
    hi, lo = add_parts(hi, lo, s[0], zeros)
    if isinstance(panel, SplitPanelA):
        exps = panel.scale.exponents[:, None]
    else:
        exps = panel.scale.exponents[None, :]
    hi, lo = scale_pow2_parts(hi, lo, exps, check_underflow=False)
    return MatrixDD(hi, lo)
