"""Double-double (FP64x2) arithmetic.

A DD value is an unevaluated sum hi + lo of two binary64 numbers whose
mantissas do not overlap, giving roughly 106 significant bits. This module
provides the error-free transformations (two_sum, two_prod) and the
renormalized add/mul built on them.

The part-wise helpers (``add_parts``, ``mul_parts``, ...) accept Python floats
or numpy arrays, so the same code serves scalars and whole matrices.
Round-to-nearest-even is assumed everywhere; other rounding modes are not
supported.

Example:
    >>> from ddcascade.ddcore import DD, dd_add, dd_mul
    >>> x = DD(1.0, 2.0 ** -60)
    >>> dd_mul(x, DD(2.0, 0.0))
    DD(hi=2.0, lo=1.7347234759768071e-18)
"""

import math
from typing import NamedTuple, Tuple

import numpy as np

from ddcascade.validators import require_finite


_SPLITTER = 134217729.0  # 2**27 + 1
_FMA = getattr(math, 'fma', None)


class ScaleRangeError(ArithmeticError):
    """Raised when a power-of-two scaling overflows or underflows a limb."""
    pass


class DD(NamedTuple):
    """A double-double number hi + lo with |lo| <= ulp(hi) / 2."""

    hi: float
    lo: float

    @classmethod
    def from_float(cls, x: float) -> 'DD':
        require_finite(x, 'x')
        return cls(float(x), 0.0)

    def to_float(self) -> float:
        """The binary64 value: hi, which carries the value rounded to nearest."""
        return self.hi


def two_sum(a, b):
    """Knuth's error-free addition: s = fl(a + b), s + e = a + b exactly.

    Works elementwise on numpy arrays.

    Args:
        a: First addend
        b: Second addend

    Returns:
        Tuple (s, e)
    """
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def quick_two_sum(a, b):
    """Dekker's fast two-sum, valid when |a| >= |b| (or a == 0)."""
    s = a + b
    e = b - (s - a)
    return s, e


def _veltkamp(a):
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


def two_prod(a, b):
    """Error-free product: p = fl(a * b), p + e = a * b exactly.

    Scalars use a correctly rounded FMA when the interpreter provides one;
    arrays (and older interpreters) use Dekker's product on Veltkamp halves,
    which is exact for |a|, |b| < 2**996.

    Args:
        a: First factor
        b: Second factor

    Returns:
        Tuple (p, e)
    """
    p = a * b
    if _FMA is not None and not isinstance(a, np.ndarray) and not isinstance(b, np.ndarray):
        return p, _FMA(a, b, -p)
    ah, al = _veltkamp(a)
    bh, bl = _veltkamp(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def add_parts(ahi, alo, bhi, blo):
    """Renormalized double-double sum of (ahi, alo) and (bhi, blo).

    Returns:
        Tuple (hi, lo)
    """
    s, e = two_sum(ahi, bhi)
    t, f = two_sum(alo, blo)
    e = e + t
    s, e = quick_two_sum(s, e)
    e = e + f
    return quick_two_sum(s, e)


def neg_parts(hi, lo):
    return -hi, -lo


def sub_parts(ahi, alo, bhi, blo):
    """Renormalized double-double difference."""
    return add_parts(ahi, alo, -bhi, -blo)


def mul_parts(ahi, alo, bhi, blo):
    """Renormalized double-double product of (ahi, alo) and (bhi, blo).

    Returns:
        Tuple (hi, lo)
    """
    p, e = two_prod(ahi, bhi)
    e = e + (ahi * blo + alo * bhi)
    return quick_two_sum(p, e)


def scale_pow2_parts(hi, lo, exponents, check_underflow: bool = True):
    """Multiply both limbs by 2**exponents exactly (elementwise).

    Args:
        hi: High limbs (array)
        lo: Low limbs (array)
        exponents: Integer exponent(s), broadcastable against hi
        check_underflow: Also reject nonzero limbs that lose bits

    Returns:
        Tuple (hi, lo) scaled

    Raises:
        ScaleRangeError: If a finite limb overflows, or a nonzero limb loses
            bits to underflow
    """
    exponents = np.asarray(exponents, dtype=np.int64)
    with np.errstate(over='ignore', under='ignore'):
        shi = np.ldexp(hi, exponents)
        slo = np.ldexp(lo, exponents)
    if not (np.all(np.isfinite(shi)) and np.all(np.isfinite(slo))):
        raise ScaleRangeError("power-of-two scaling overflowed binary64")
    if not check_underflow:
        return shi, slo
    with np.errstate(over='ignore', under='ignore'):
        back_hi = np.ldexp(shi, -exponents)
        back_lo = np.ldexp(slo, -exponents)
    if not (np.array_equal(back_hi, np.broadcast_to(hi, back_hi.shape))
            and np.array_equal(back_lo, np.broadcast_to(lo, back_lo.shape))):
        raise ScaleRangeError("power-of-two scaling underflowed binary64")
    return shi, slo


def dd_add(a: DD, b: DD) -> DD:
    """Double-double addition; relative error <= 2 * 2**-106."""
    return DD(*add_parts(a.hi, a.lo, b.hi, b.lo))


def dd_sub(a: DD, b: DD) -> DD:
    return DD(*sub_parts(a.hi, a.lo, b.hi, b.lo))


def dd_mul(a: DD, b: DD) -> DD:
    """Double-double multiplication; relative error <= 4 * 2**-106."""
    return DD(*mul_parts(a.hi, a.lo, b.hi, b.lo))


def dd_from_parts(hi: float, lo: float) -> DD:
    """Build a renormalized DD from two arbitrary finite binary64 values.

    Args:
        hi: First part
        lo: Second part

    Returns:
        DD with hi' + lo' == hi + lo exactly and non-overlapping limbs

    Raises:
        NonFiniteError: If either part is NaN or infinite

    Example:
        >>> dd_from_parts(2.0 ** -60, 1.0)
        DD(hi=1.0, lo=8.673617379884035e-19)
    """
    require_finite(hi, 'hi')
    require_finite(lo, 'lo')
    s, e = two_sum(float(hi), float(lo))
    return DD(s, e)


def dd_scale_pow2(a: DD, p: int) -> DD:
    """Scale a DD by 2**p exactly.

    Raises:
        ScaleRangeError: If either limb overflows or loses bits to underflow
    """
    try:
        hi = math.ldexp(a.hi, p)
        lo = math.ldexp(a.lo, p)
    except OverflowError as e:
        raise ScaleRangeError(f"scaling by 2**{p} overflows: {e}")
    if math.ldexp(hi, -p) != a.hi or math.ldexp(lo, -p) != a.lo:
        raise ScaleRangeError(f"scaling by 2**{p} underflows")
    return DD(hi, lo)


def dd_abs(a: DD) -> DD:
    return a if a.hi >= 0.0 else DD(-a.hi, -a.lo)


def sum_products(xhi, xlo, yhi, ylo) -> Tuple[float, float]:
    """Left-to-right DD dot product of two DD vectors (given by parts)."""
    shi, slo = 0.0, 0.0
    for p in range(len(xhi)):
        phi, plo = mul_parts(float(xhi[p]), float(xlo[p]), float(yhi[p]), float(ylo[p]))
        shi, slo = add_parts(shi, slo, phi, plo)
    return shi, slo
