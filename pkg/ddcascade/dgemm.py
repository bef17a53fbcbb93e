"""Portable Goto-style blocked binary64 GEMM.

Loop structure (outermost first): jc over nC column panels of B, pc over kC
rank-k updates, ic over mC row blocks of A, then the macrokernel loops over
nR and mR strips and calls the mR x nR microkernel. A and B blocks are packed
into micro-panel order before use.

Every output element accumulates its products strictly left to right over
the k index within a kC panel, and panels are added to C in order, so the
result depends only on kC (never on mC, nC, mR or nR).
"""

import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ddcascade.validators import (
    ValidationError,
    require_finite,
    require_gemm_shapes,
    require_power_of_two,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlockingParams:
    """Cache blocking parameters.

    Attributes:
        mc: Rows of A per packed block (multiple of mr)
        nc: Columns of B per packed panel (multiple of nr)
        kc: Depth of each rank-k update
        mr: Microkernel rows
        nr: Microkernel columns
    """

    mc: int = 256
    nc: int = 4096
    kc: int = 256
    mr: int = 4
    nr: int = 4

    def __post_init__(self):
        for name in ('mc', 'nc', 'kc', 'mr', 'nr'):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValidationError(f"blocking parameter {name} must be a positive integer, got {value!r}")
        if self.mc % self.mr:
            raise ValidationError(f"mc={self.mc} is not a multiple of mr={self.mr}")
        if self.nc % self.nr:
            raise ValidationError(f"nc={self.nc} is not a multiple of nr={self.nr}")

    def fused(self) -> 'BlockingParams':
        """Blocking for the fused cascaded path: mc and nc divided by four.

        The fused path keeps four splits of A and seven of B in cache, so the
        packed blocks shrink accordingly (never below one micro-tile).
        """
        mc = max(self.mr, (self.mc // 4) // self.mr * self.mr)
        nc = max(self.nr, (self.nc // 4) // self.nr * self.nr)
        return replace(self, mc=mc, nc=nc)


@dataclass
class PackedPanel:
    """Contiguous buffer in micro-panel order.

    For A (kind 'A') strip s holds rows s*strip .. s*strip+strip-1, stored
    column by column; for B (kind 'B') strip s holds columns likewise, row by
    row. Edge strips are zero padded.
    """

    data: np.ndarray
    rows: int
    cols: int
    strip: int
    kind: str

    @property
    def depth(self) -> int:
        return self.cols if self.kind == 'A' else self.rows

    @property
    def num_strips(self) -> int:
        width = self.rows if self.kind == 'A' else self.cols
        return -(-width // self.strip)

    def strips(self) -> np.ndarray:
        """View shaped (num_strips, depth, strip)."""
        return self.data.reshape(self.num_strips, self.depth, self.strip)


def pack_a(block: np.ndarray, mr: int = 4) -> PackedPanel:
    """Pack an m x k block of A into mR-row strips.

    Example:
        >>> X = np.arange(16.0).reshape(4, 4)
        >>> np.array_equal(pack_a(X, 4).data, X.T.ravel())
        True
    """
    block = np.asarray(block, dtype=np.float64)
    m, k = block.shape
    ns = -(-m // mr)
    padded = np.zeros((ns * mr, k))
    padded[:m] = block
    data = np.ascontiguousarray(padded.reshape(ns, mr, k).transpose(0, 2, 1)).ravel()
    return PackedPanel(data, m, k, mr, 'A')


def pack_b(panel: np.ndarray, nr: int = 4) -> PackedPanel:
    """Pack a k x n panel of B into nR-column strips."""
    panel = np.asarray(panel, dtype=np.float64)
    k, n = panel.shape
    ns = -(-n // nr)
    padded = np.zeros((k, ns * nr))
    padded[:, :n] = panel
    data = np.ascontiguousarray(padded.reshape(k, ns, nr).transpose(1, 0, 2)).ravel()
    return PackedPanel(data, k, n, nr, 'B')


def unpack_a(packed: PackedPanel) -> np.ndarray:
    full = packed.strips().transpose(0, 2, 1).reshape(-1, packed.cols)
    return full[:packed.rows].copy()


def unpack_b(packed: PackedPanel) -> np.ndarray:
    full = packed.strips().transpose(1, 0, 2).reshape(packed.rows, -1)
    return full[:, :packed.cols].copy()


@dataclass
class KernelCounter:
    """Instrumentation for microkernel calls and GEMM products."""

    microkernel_calls: int = 0
    gemm_calls: int = 0
    flops: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record_microkernel(self, calls: int = 1) -> None:
        with self._lock:
            self.microkernel_calls += calls

    def record_gemm(self, m: int, n: int, k: int) -> None:
        with self._lock:
            self.gemm_calls += 1
            self.flops += gemm_flops(m, n, k)

    def merge(self, other: 'KernelCounter') -> None:
        with self._lock:
            self.microkernel_calls += other.microkernel_calls
            self.gemm_calls += other.gemm_calls
            self.flops += other.flops


def gemm_flops(m: int, n: int, k: int) -> int:
    """Flop count of one m x n x k GEMM: 2mnk."""
    return 2 * m * n * k


def microkernel(a_strip: np.ndarray, b_strip: np.ndarray, scale: float,
                c_tile: np.ndarray, counter: Optional[KernelCounter] = None) -> np.ndarray:
    """c_tile += scale * (a_strip^T b_strip), summed left to right over k.

    Args:
        a_strip: Packed A strip, shape (k, mr)
        b_strip: Packed B strip, shape (k, nr)
        scale: Exact power of two
        c_tile: mr x nr accumulator, updated in place
        counter: Optional instrumentation

    Returns:
        c_tile
    """
    if counter is not None:
        counter.record_microkernel()
    if a_strip.shape[0] == 0:
        return c_tile
    prods = a_strip[:, :, None] * b_strip[:, None, :]
    # accumulate is a sequential scan; + 0.0 makes the start value +0
    acc = np.add.accumulate(prods, axis=0)[-1] + 0.0
    c_tile += scale * acc
    return c_tile


def macrokernel(a_packed: PackedPanel, b_packed: PackedPanel, scale: float,
                c_block: np.ndarray, counter: Optional[KernelCounter] = None) -> None:
    """Loop the microkernel over all strip pairs of a packed block and panel."""
    mr, nr = a_packed.strip, b_packed.strip
    a_strips = a_packed.strips()
    b_strips = b_packed.strips()
    m, n = c_block.shape
    for jr in range(b_packed.num_strips):
        j0 = jr * nr
        w = min(nr, n - j0)
        for ir in range(a_packed.num_strips):
            i0 = ir * mr
            h = min(mr, m - i0)
            if h == mr and w == nr:
                microkernel(a_strips[ir], b_strips[jr], scale, c_block[i0:i0 + mr, j0:j0 + nr], counter)
            else:
                tile = np.zeros((mr, nr))
                tile[:h, :w] = c_block[i0:i0 + h, j0:j0 + w]
                microkernel(a_strips[ir], b_strips[jr], scale, tile, counter)
                c_block[i0:i0 + h, j0:j0 + w] = tile[:h, :w]


def dgemm(A: np.ndarray, B: np.ndarray, C: np.ndarray,
          params: Optional[BlockingParams] = None, scale: float = 1.0,
          counter: Optional[KernelCounter] = None) -> np.ndarray:
    """Blocked C += scale * A B in binary64.

    Args:
        A: m x k matrix
        B: k x n matrix
        C: m x n float64 accumulator, updated in place
        params: Blocking parameters (defaults when None)
        scale: Exact power of two applied to every rank-kC update
        counter: Optional instrumentation

    Returns:
        C

    Raises:
        ShapeError: If shapes disagree
        ValidationError: If scale is not a power of two
    """
    params = params or BlockingParams()
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    require_gemm_shapes(A.shape, B.shape, C.shape)
    require_power_of_two(scale)
    if C.dtype != np.float64:
        raise ValidationError(f"accumulator must be float64, got {C.dtype}")
    m, k = A.shape
    n = B.shape[1]
    if counter is not None:
        counter.record_gemm(m, n, k)

    for jc in range(0, n, params.nc):
        jend = min(jc + params.nc, n)
        for pc in range(0, k, params.kc):
            pend = min(pc + params.kc, k)
            b_packed = pack_b(B[pc:pend, jc:jend], params.nr)
            for ic in range(0, m, params.mc):
                iend = min(ic + params.mc, m)
                a_packed = pack_a(A[ic:iend, pc:pend], params.mr)
                macrokernel(a_packed, b_packed, scale, C[ic:iend, jc:jend], counter)
    return C


def naive_blocked_gemm(A: np.ndarray, B: np.ndarray, C: np.ndarray,
                       kc: int = 256, scale: float = 1.0) -> np.ndarray:
    """Reference loop with the same per-element summation order as dgemm."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    require_gemm_shapes(A.shape, B.shape, C.shape)
    require_finite(scale, 'scale')
    m, k = A.shape
    n = B.shape[1]
    for pc in range(0, k, kc):
        t = np.zeros((m, n))
        for p in range(pc, min(pc + kc, k)):
            t = t + np.outer(A[:, p], B[p, :])
        C += scale * t
    return C
