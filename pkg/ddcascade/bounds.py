"""Analytical error bounds and the dot-product condition number."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from ddcascade.cascade import SplitWidths
from ddcascade.cascgemm import ddgemm_naive
from ddcascade.ddcore import DD, add_parts, mul_parts
from ddcascade.exactref import Dyadic, MatrixDD, exact_gemm
from ddcascade.validators import ShapeError, ValidationError


logger = logging.getLogger(__name__)

EPS_MACH = 2.0 ** -53
EPS_DD = 2.0 ** -106
CASCADE_BOUND_FACTOR = 40


def _as_column(values) -> MatrixDD:
    if isinstance(values, MatrixDD):
        return values
    hi = np.array([v.hi for v in values], dtype=np.float64)
    lo = np.array([v.lo for v in values], dtype=np.float64)
    return MatrixDD(hi[:, None], lo[:, None])


@dataclass(frozen=True)
class ErrorBoundInputs:
    """Norms feeding the forward error bounds of one dot product.

    Attributes:
        k: Vector length
        norm_inf_x: max |x_p|
        norm_inf_y: max |y_p|
        abs_dot: |x|^T |y|, summed in DD and rounded to binary64
    """

    k: int
    norm_inf_x: float
    norm_inf_y: float
    abs_dot: float

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"depth must be at least 1, got {self.k}")
        for name in ('norm_inf_x', 'norm_inf_y', 'abs_dot'):
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise ValidationError(f"{name} must be finite and nonnegative, got {value!r}")

    @classmethod
    def from_vectors(cls, x, y) -> 'ErrorBoundInputs':
        """Measure the inputs from two DD vectors (sequences of DD)."""
        xc = _as_column(x)
        yc = _as_column(y)
        if xc.shape != yc.shape:
            raise ShapeError(f"dot operands differ in length: {xc.rows} vs {yc.rows}")
        sx = np.where(xc.hi < 0.0, -1.0, 1.0)
        sy = np.where(yc.hi < 0.0, -1.0, 1.0)
        shi, slo = 0.0, 0.0
        for p in range(xc.rows):
            phi, plo = mul_parts(float(sx[p, 0] * xc.hi[p, 0]), float(sx[p, 0] * xc.lo[p, 0]),
                                 float(sy[p, 0] * yc.hi[p, 0]), float(sy[p, 0] * yc.lo[p, 0]))
            shi, slo = add_parts(shi, slo, phi, plo)
        return cls(
            k=xc.rows,
            norm_inf_x=float(np.max(np.abs(xc.hi), initial=0.0)),
            norm_inf_y=float(np.max(np.abs(yc.hi), initial=0.0)),
            abs_dot=float(shi + slo),
        )


def cascaded_error_bound(inputs: ErrorBoundInputs, widths: SplitWidths) -> float:
    """|x|^T|y| eps_dd + 40 k^2 eps_cascaded ||x||inf ||y||inf.

    Example:
        >>> inputs = ErrorBoundInputs(256, 1.0, 1.0, 256.0)
        >>> cascaded_error_bound(inputs, select_widths(256)) == 3 * 2.0 ** -97
        True
    """
    k = inputs.k
    return (inputs.abs_dot * EPS_DD
            + CASCADE_BOUND_FACTOR * k * k * widths.eps_cascaded * inputs.norm_inf_x * inputs.norm_inf_y)


def fp64x2_error_bound(inputs: ErrorBoundInputs) -> float:
    """k eps_dd |x|^T|y|, the first-order bound for a DD dot product."""
    return inputs.k * EPS_DD * inputs.abs_dot


def _dd_row_sumsq(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """Per-row sum of squares in DD (rows of a 2-D limb pair), rounded."""
    shi = np.zeros(hi.shape[0])
    slo = np.zeros(hi.shape[0])
    for p in range(hi.shape[1]):
        phi, plo = mul_parts(hi[:, p], lo[:, p], hi[:, p], lo[:, p])
        shi, slo = add_parts(shi, slo, phi, plo)
    return shi + slo


def dot_condition_matrix(A: MatrixDD, B: MatrixDD) -> np.ndarray:
    """Condition number of every dot product in A B.

    Entry (i, j) is ||A[i,:]||_2 ||B[:,j]||_2 / |A[i,:] B[:,j]| with the sums
    taken in DD; exactly orthogonal pairs get math.inf.
    """
    dot = ddgemm_naive(A, B)
    sx = _dd_row_sumsq(A.hi, A.lo)
    sy = _dd_row_sumsq(B.hi.T, B.lo.T)
    num = np.sqrt(sx[:, None] * sy[None, :])
    mag = np.abs(dot.hi + dot.lo)
    with np.errstate(divide='ignore', invalid='ignore'):
        cond = num / mag
    return np.where(mag == 0.0, math.inf, cond)


def dot_condition(x, y) -> float:
    """Condition number of one dot product; math.inf when x^T y == 0.

    Example:
        >>> dot_condition([DD(1.0, 0.0), DD(1.0, 0.0)], [DD(1.0, 0.0), DD(-1.0, 0.0)])
        inf
    """
    xc = _as_column(x)
    yc = _as_column(y)
    if xc.shape != yc.shape:
        raise ShapeError(f"dot operands differ in length: {xc.rows} vs {yc.rows}")
    return float(dot_condition_matrix(xc.transpose(), yc)[0, 0])


def measured_dot_error(value: DD, x, y) -> float:
    """|value - x^T y| with the exact dot product from the dyadic oracle."""
    xc = _as_column(x)
    yc = _as_column(y)
    exact = exact_gemm(xc.transpose(), yc).entry(0, 0)
    diff = Dyadic.from_dd(value.hi, value.lo) - exact
    return abs(diff).to_float()
