"""Boundary checks shared by the numeric modules.

Every public entry point that accepts matrices or double-double values runs
its inputs through these helpers, so NaN/Inf and malformed shapes are rejected
before any splitting happens.

Example:
    >>> from ddcascade.validators import require_finite, require_inner_dims
    >>> require_finite(hi, 'A.hi')
    >>> require_inner_dims(a_shape, b_shape)
"""

import logging
import math
from typing import Sequence, Tuple

import numpy as np


logger = logging.getLogger(__name__)


class ValidationError(ValueError):
    """Raised when an input violates a library boundary contract."""
    pass


class NonFiniteError(ValidationError):
    """Raised when NaN or Inf reaches a library boundary."""
    pass


class ShapeError(ValidationError):
    """Raised when matrix or vector shapes do not agree."""
    pass


class NormalizationError(ValidationError):
    """Raised when a (hi, lo) pair overlaps."""
    pass


def require_finite(values, what: str = 'value') -> None:
    """Reject NaN/Inf in a scalar or array.

    Args:
        values: Float or numpy array
        what: Name used in the error message

    Raises:
        NonFiniteError: If any element is NaN or infinite
    """
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        bad = int(np.count_nonzero(~np.isfinite(arr)))
        raise NonFiniteError(f"{what} contains {bad} non-finite value(s)")


def is_normalized(hi, lo) -> np.ndarray:
    """Elementwise non-overlap test: fl(hi + lo) == hi, and lo == 0 when hi == 0.

    Args:
        hi: High limbs
        lo: Low limbs

    Returns:
        Boolean array (or numpy bool for scalars)
    """
    hi = np.asarray(hi, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    with np.errstate(over='ignore', invalid='ignore'):
        ok = (hi + lo) == hi
    return ok & ((hi != 0.0) | (lo == 0.0))


def require_normalized(hi, lo, what: str = 'value') -> None:
    """Reject overlapping (hi, lo) pairs.

    Raises:
        NormalizationError: If any pair overlaps
    """
    ok = is_normalized(hi, lo)
    if not np.all(ok):
        bad = int(np.count_nonzero(~ok))
        raise NormalizationError(f"{what} has {bad} overlapping hi/lo pair(s)")


def require_same_shape(a: Sequence[int], b: Sequence[int], what: str = 'operands') -> None:
    """Require two shapes to be identical.

    Raises:
        ShapeError: On mismatch
    """
    if tuple(a) != tuple(b):
        raise ShapeError(f"{what}: shape {tuple(a)} does not match {tuple(b)}")


def require_inner_dims(a: Tuple[int, int], b: Tuple[int, int]) -> None:
    """Require A (m x k) and B (k x n) to agree on k.

    Raises:
        ShapeError: If inner dimensions differ
    """
    if len(a) != 2 or len(b) != 2:
        raise ShapeError(f"expected 2-D operands, got {tuple(a)} and {tuple(b)}")
    if a[1] != b[0]:
        raise ShapeError(f"inner dimensions differ: {a[0]}x{a[1]} times {b[0]}x{b[1]}")


def require_gemm_shapes(a: Tuple[int, int], b: Tuple[int, int], c: Tuple[int, int]) -> None:
    """Require C += A * B to be well formed.

    Raises:
        ShapeError: If any dimension disagrees
    """
    require_inner_dims(a, b)
    if tuple(c) != (a[0], b[1]):
        raise ShapeError(f"accumulator is {tuple(c)}, expected {(a[0], b[1])}")


def is_power_of_two(x: float) -> bool:
    """True if x is a positive finite power of two (normal or subnormal)."""
    if not (x > 0.0 and math.isfinite(x)):
        return False
    mantissa, _ = math.frexp(x)
    return mantissa == 0.5


def require_power_of_two(x: float, what: str = 'scale') -> None:
    """Reject scales that are not exact powers of two.

    Raises:
        ValidationError: If x is not a power of two
    """
    if not is_power_of_two(x):
        raise ValidationError(f"{what} must be an exact power of two, got {x!r}")
