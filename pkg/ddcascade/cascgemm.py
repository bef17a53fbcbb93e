"""Cascaded FP64x2 GEMM: ten binary64 products per rank-kC panel.

Each panel of A is cascaded into A0..A3 (per-row scales) and each panel of B
into B0..B6 (per-column scales). The ten products below land in four binary64
bins whose reference scales are 1, sigma1, sigma2 and sigma3:

    bin 0    A0 B0
    bin 1    A0 B1 + A1 B0
    bin 2    A0 B2 + 2**(c1-c0) A1 B1 + A2 B0
    bin 3-6  A0 B3 + 2**(c2-c0) (A1 B4 + A2 B5) + A3 B6

Bins 0-2 are exact. The bins are combined in double-double from bin 3-6 up
to bin 0, rescaled by the row and column exponents and added to C in DD.

Two interchangeable paths are provided: ``cascaded_gemm_simple`` splits whole
panels and runs ten dgemm calls, ``cascaded_gemm_fused`` splits while packing
and combines each micro-tile right after its ten microkernel calls. They
perform the same operations per element and agree bit for bit.

Example:
    >>> from ddcascade.cascgemm import cascaded_gemm_fused
    >>> C, report = cascaded_gemm_fused(A, B)
    >>> print(report.flagged_count, report.gemm_products)
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from ddcascade.cascade import (
    SplitPanelA,
    SplitPanelB,
    SplitWidths,
    derived_b_splits,
    row_scales,
    select_widths,
    split_arrays,
    split_panel_a,
    split_panel_b,
)
from ddcascade.ddcore import DD, add_parts, mul_parts, scale_pow2_parts
from ddcascade.dgemm import (
    BlockingParams,
    KernelCounter,
    dgemm,
    microkernel,
    pack_a,
    pack_b,
)
from ddcascade.exactref import Dyadic, MatrixDD
from ddcascade.validators import ShapeError, require_inner_dims


logger = logging.getLogger(__name__)

FAULT_ENV = 'DDCASCADE_FAULT_BIN_ALIGN'
NUM_BINS = 4


def fault_injection_active() -> bool:
    """Test hook: doubles the A1 B1 alignment factor in bin 2 when set."""
    return os.environ.get(FAULT_ENV, '') == '1'


class BinProduct(NamedTuple):
    """One split product: A[a] @ B[b] accumulated into ``bin``."""

    bin: int
    a: int
    b: int
    align: str = ''

    def exponent(self, widths: SplitWidths) -> int:
        """Power-of-two alignment of this product relative to its bin."""
        if self.align == 'c1-c0':
            e = widths.c1 - widths.c0
            if fault_injection_active():
                e += 1
            return e
        if self.align == 'c2-c0':
            return widths.c2 - widths.c0
        return 0


BIN_PRODUCTS: Tuple[BinProduct, ...] = (
    BinProduct(0, 0, 0),
    BinProduct(1, 0, 1),
    BinProduct(1, 1, 0),
    BinProduct(2, 0, 2),
    BinProduct(2, 1, 1, 'c1-c0'),
    BinProduct(2, 2, 0),
    BinProduct(3, 0, 3),
    BinProduct(3, 1, 4, 'c2-c0'),
    BinProduct(3, 2, 5, 'c2-c0'),
    BinProduct(3, 3, 6),
)


@dataclass
class BinAccumulator:
    """The four bins (0, 1, 2 and merged 3-6) of one output block."""

    bins: List[np.ndarray]

    @classmethod
    def zeros(cls, rows: int, cols: int) -> 'BinAccumulator':
        return cls([np.zeros((rows, cols)) for _ in range(NUM_BINS)])

    @property
    def bin0(self) -> np.ndarray:
        return self.bins[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bins[0].shape

    def bitwise_equal(self, other: 'BinAccumulator', upto: int = NUM_BINS) -> bool:
        return all(np.ascontiguousarray(a).tobytes() == np.ascontiguousarray(b).tobytes()
                   for a, b in zip(self.bins[:upto], other.bins[:upto]))


@dataclass
class CancellationReport:
    """Output elements whose bin 0 was zero in at least one panel.

    Attributes:
        flagged_mask: Boolean m x n mask (union over panels)
        panel_counts: Number of zero bin-0 entries per panel
        total_panels: Rank-kC panels in the product
        gemm_products: Binary64 GEMM products issued
        microkernel_calls: Microkernel invocations
        partitions: Column partitions the product ran on
        panel_bins: Per-panel bins when requested
    """

    flagged_mask: np.ndarray
    panel_counts: List[int] = field(default_factory=list)
    total_panels: int = 0
    gemm_products: int = 0
    microkernel_calls: int = 0
    partitions: int = 1
    panel_bins: Optional[List[BinAccumulator]] = None

    @property
    def flagged(self) -> Set[Tuple[int, int]]:
        rows, cols = np.nonzero(self.flagged_mask)
        return {(int(i), int(j)) for i, j in zip(rows, cols)}

    @property
    def flagged_count(self) -> int:
        return int(np.count_nonzero(self.flagged_mask))

    @property
    def products_per_panel(self) -> float:
        pairs = self.total_panels * self.partitions
        return self.gemm_products / pairs if pairs else 0.0

    @classmethod
    def hstack(cls, reports: Sequence['CancellationReport'], rows: int) -> 'CancellationReport':
        """Merge the reports of disjoint column partitions (in column order)."""
        if not reports:
            return cls(np.zeros((rows, 0), dtype=bool))
        total = reports[0].total_panels
        counts = [sum(r.panel_counts[p] for r in reports) for p in range(total)]
        panel_bins = None
        if all(r.panel_bins is not None for r in reports):
            panel_bins = [BinAccumulator([np.hstack([r.panel_bins[p].bins[b] for r in reports])
                                          for b in range(NUM_BINS)])
                          for p in range(total)]
        return cls(
            flagged_mask=np.hstack([r.flagged_mask for r in reports]),
            panel_counts=counts,
            total_panels=total,
            gemm_products=sum(r.gemm_products for r in reports),
            microkernel_calls=sum(r.microkernel_calls for r in reports),
            partitions=len(reports),
            panel_bins=panel_bins,
        )


def combine_bins(bins: BinAccumulator, row_exponents, col_exponents,
                 widths: SplitWidths) -> MatrixDD:
    """Combine bins in DD from bin 3-6 up to bin 0, then apply the scales.

    Args:
        bins: Bins of one output block
        row_exponents: Scale exponents of the A rows (array or int)
        col_exponents: Scale exponents of the B columns (array or int)
        widths: Split widths the bins were built with

    Returns:
        MatrixDD block

    Raises:
        ScaleRangeError: If the final power-of-two scaling overflows
    """
    b0, b1, b2, b36 = bins.bins
    zeros = np.zeros_like(b0)
    hi, lo = np.ldexp(b36, -widths.D2), zeros
    hi, lo = add_parts(hi, lo, np.ldexp(b2, -widths.D1), zeros)
    hi, lo = add_parts(hi, lo, np.ldexp(b1, -widths.D0), zeros)
    hi, lo = add_parts(hi, lo, b0, zeros)
    row = np.atleast_1d(np.asarray(row_exponents, dtype=np.int64))
    col = np.atleast_1d(np.asarray(col_exponents, dtype=np.int64))
    exps = row[:, None] + col[None, :]
    hi, lo = scale_pow2_parts(hi, lo, exps, check_underflow=False)
    return MatrixDD(hi, lo)


def _resolve_params(params: Optional[BlockingParams], kc: Optional[int]) -> BlockingParams:
    params = params or BlockingParams()
    if kc is not None and kc != params.kc:
        params = replace(params, kc=kc)
    return params


def cascaded_panel_bins(A_panel: MatrixDD, B_panel: MatrixDD,
                        widths: Optional[SplitWidths] = None,
                        params: Optional[BlockingParams] = None,
                        counter: Optional[KernelCounter] = None
                        ) -> Tuple[BinAccumulator, SplitPanelA, SplitPanelB]:
    """Split one rank-k panel pair and run the ten products into four bins.

    Returns:
        Tuple (bins, split A panel, split B panel)
    """
    require_inner_dims(A_panel.shape, B_panel.shape)
    widths = widths or select_widths(A_panel.cols)
    # one rank-k update per product
    params = params or BlockingParams(kc=widths.k)
    sa = split_panel_a(A_panel, widths)
    sb = split_panel_b(B_panel, widths)
    bins = BinAccumulator.zeros(A_panel.rows, B_panel.cols)
    for prod in BIN_PRODUCTS:
        dgemm(sa.splits[prod.a], sb.splits[prod.b], bins.bins[prod.bin], params,
              scale=2.0 ** prod.exponent(widths), counter=counter)
    return bins, sa, sb


def _check_operands(A: MatrixDD, B: MatrixDD, C: Optional[MatrixDD]) -> MatrixDD:
    require_inner_dims(A.shape, B.shape)
    A.validate('A')
    B.validate('B')
    if C is None:
        return MatrixDD.zeros(A.rows, B.cols)
    if C.shape != (A.rows, B.cols):
        raise ShapeError(f"accumulator is {C.shape}, expected {(A.rows, B.cols)}")
    C.validate('C')
    return C


def _column_ranges(n: int, partitions: int) -> List[Tuple[int, int]]:
    partitions = max(1, min(partitions, n)) if n else 1
    bounds = np.linspace(0, n, partitions + 1).astype(int)
    return [(int(bounds[p]), int(bounds[p + 1])) for p in range(partitions)]


def _run_partitioned(worker, A: MatrixDD, B: MatrixDD, C: MatrixDD, partitions: int) -> CancellationReport:
    ranges = _column_ranges(B.cols, partitions)
    jobs = [(B.block(slice(None), slice(j0, j1)), C.block(slice(None), slice(j0, j1))) for j0, j1 in ranges]
    if len(jobs) == 1:
        reports = [worker(A, *jobs[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            reports = list(pool.map(lambda job: worker(A, *job), jobs))
    report = CancellationReport.hstack(reports, A.rows)
    if report.flagged_count:
        logger.warning(f"{report.flagged_count} output element(s) flagged for cancellation "
                       f"(bin 0 zero in some panel)")
    return report


def _add_into(C: MatrixDD, rows: slice, cols: slice, part: MatrixDD) -> None:
    hi, lo = add_parts(C.hi[rows, cols], C.lo[rows, cols], part.hi, part.lo)
    C.hi[rows, cols] = hi
    C.lo[rows, cols] = lo


def cascaded_gemm_simple(A: MatrixDD, B: MatrixDD, C: Optional[MatrixDD] = None,
                         params: Optional[BlockingParams] = None, kc: Optional[int] = None,
                         partitions: int = 1, collect_bins: bool = False
                         ) -> Tuple[MatrixDD, CancellationReport]:
    """C += A B with whole-panel splitting and ten dgemm calls per panel.

    Args:
        A: m x k DD matrix
        B: k x n DD matrix
        C: m x n DD accumulator (zeros when None), updated in place
        params: Blocking parameters for the inner dgemm calls
        kc: Panel depth override
        partitions: Column partitions run concurrently
        collect_bins: Keep the bins of every panel in the report

    Returns:
        Tuple (C, CancellationReport)

    Raises:
        ShapeError: If shapes disagree
    """
    params = _resolve_params(params, kc)
    C = _check_operands(A, B, C)
    if fault_injection_active():
        logger.warning(f"{FAULT_ENV} is set: bin-2 alignment is deliberately wrong")

    def worker(A: MatrixDD, Bp: MatrixDD, Cp: MatrixDD) -> CancellationReport:
        counter = KernelCounter()
        flagged = np.zeros(Cp.shape, dtype=bool)
        counts, kept = [], []
        k = A.cols
        for pc in range(0, k, params.kc):
            pend = min(pc + params.kc, k)
            widths = select_widths(pend - pc, k_max=params.kc)
            bins, sa, sb = cascaded_panel_bins(A.block(slice(None), slice(pc, pend)),
                                               Bp.block(slice(pc, pend), slice(None)),
                                               widths, params, counter)
            zero = bins.bin0 == 0.0
            flagged |= zero
            counts.append(int(np.count_nonzero(zero)))
            if collect_bins:
                kept.append(bins)
            part = combine_bins(bins, sa.scale.exponents, sb.scale.exponents, widths)
            _add_into(Cp, slice(None), slice(None), part)
            logger.debug(f"simple panel k={pc}:{pend} widths=({widths.c0},{widths.c1},{widths.c2})")
        return CancellationReport(flagged, counts, len(counts), counter.gemm_calls,
                                  counter.microkernel_calls, 1, kept if collect_bins else None)

    report = _run_partitioned(worker, A, B, C, partitions)
    return C, report


def _pack_exponents(exponents: np.ndarray, strip: int) -> np.ndarray:
    """Exponents laid out like a packed strip: shape (num_strips, 1, strip)."""
    ns = -(-len(exponents) // strip)
    padded = np.zeros(ns * strip, dtype=np.int64)
    padded[:len(exponents)] = exponents
    return padded.reshape(ns, 1, strip)


def _pack_split_a(block: MatrixDD, widths: SplitWidths, mr: int) -> Tuple[List[np.ndarray], np.ndarray]:
    """Pack a block of A and cascade it on the fly: four (ns, k, mr) splits."""
    exponents = row_scales(block.hi, block.lo, axis=1)
    hi = pack_a(block.hi, mr).strips()
    lo = pack_a(block.lo, mr).strips()
    return split_arrays(hi, lo, _pack_exponents(exponents, mr), widths), exponents


def _pack_split_b(panel: MatrixDD, widths: SplitWidths, nr: int) -> Tuple[List[np.ndarray], np.ndarray]:
    """Pack a panel of B and cascade it on the fly: seven (ns, k, nr) splits."""
    exponents = row_scales(panel.hi, panel.lo, axis=0)
    hi = pack_b(panel.hi, nr).strips()
    lo = pack_b(panel.lo, nr).strips()
    b0, b1, b2, b3 = split_arrays(hi, lo, _pack_exponents(exponents, nr), widths)
    return [b0, b1, b2, b3, *derived_b_splits(b0, b1, b2, b3, widths)], exponents


def cascaded_gemm_fused(A: MatrixDD, B: MatrixDD, C: Optional[MatrixDD] = None,
                        params: Optional[BlockingParams] = None, kc: Optional[int] = None,
                        partitions: int = 1, collect_bins: bool = False
                        ) -> Tuple[MatrixDD, CancellationReport]:
    """C += A B with splitting fused into packing and per-tile bins.

    Uses ``params.fused()`` blocking (mc and nc divided by four). Each
    micro-tile runs the ten microkernel calls into four bin tiles, which are
    combined and added to C before moving on.

    Args:
        A: m x k DD matrix
        B: k x n DD matrix
        C: m x n DD accumulator (zeros when None), updated in place
        params: Blocking parameters (before the fused division)
        kc: Panel depth override
        partitions: Column partitions run concurrently
        collect_bins: Keep the bins of every panel in the report

    Returns:
        Tuple (C, CancellationReport)
    """
    params = _resolve_params(params, kc)
    fp = params.fused()
    C = _check_operands(A, B, C)
    if fault_injection_active():
        logger.warning(f"{FAULT_ENV} is set: bin-2 alignment is deliberately wrong")
    mr, nr = fp.mr, fp.nr

    def worker(A: MatrixDD, Bp: MatrixDD, Cp: MatrixDD) -> CancellationReport:
        counter = KernelCounter()
        m, k = A.shape
        n = Bp.cols
        panels = list(range(0, k, fp.kc))
        flagged = np.zeros((m, n), dtype=bool)
        counts = [0] * len(panels)
        kept = [BinAccumulator.zeros(m, n) for _ in panels] if collect_bins else None
        # products that reached the microkernel, per panel
        issued = [set() for _ in panels]
        for jc in range(0, n, fp.nc):
            jend = min(jc + fp.nc, n)
            for p, pc in enumerate(panels):
                pend = min(pc + fp.kc, k)
                widths = select_widths(pend - pc, k_max=fp.kc)
                scales = [2.0 ** prod.exponent(widths) for prod in BIN_PRODUCTS]
                b_splits, col_exp = _pack_split_b(Bp.block(slice(pc, pend), slice(jc, jend)), widths, nr)
                for ic in range(0, m, fp.mc):
                    iend = min(ic + fp.mc, m)
                    a_splits, row_exp = _pack_split_a(A.block(slice(ic, iend), slice(pc, pend)), widths, mr)
                    for jr in range(b_splits[0].shape[0]):
                        j0 = jc + jr * nr
                        w = min(nr, jend - j0)
                        for ir in range(a_splits[0].shape[0]):
                            i0 = ic + ir * mr
                            h = min(mr, iend - i0)
                            tiles = BinAccumulator.zeros(mr, nr)
                            for index, (prod, scale) in enumerate(zip(BIN_PRODUCTS, scales)):
                                microkernel(a_splits[prod.a][ir], b_splits[prod.b][jr], scale,
                                            tiles.bins[prod.bin], counter)
                                issued[p].add(index)
                            tiles = BinAccumulator([t[:h, :w] for t in tiles.bins])
                            zero = tiles.bin0 == 0.0
                            flagged[i0:i0 + h, j0:j0 + w] |= zero
                            counts[p] += int(np.count_nonzero(zero))
                            if kept is not None:
                                for b in range(NUM_BINS):
                                    kept[p].bins[b][i0:i0 + h, j0:j0 + w] = tiles.bins[b]
                            part = combine_bins(tiles, row_exp[ir * mr:ir * mr + h],
                                                col_exp[jr * nr:jr * nr + w], widths)
                            _add_into(Cp, slice(i0, i0 + h), slice(j0, j0 + w), part)
        for p, pc in enumerate(panels):
            pend = min(pc + fp.kc, k)
            for _ in issued[p]:
                counter.record_gemm(m, n, pend - pc)
        logger.debug(f"fused product {m}x{k}x{n}: {len(panels)} panel(s), "
                     f"{counter.microkernel_calls} microkernel calls")
        return CancellationReport(flagged, counts, len(panels), counter.gemm_calls,
                                  counter.microkernel_calls, 1, kept)

    report = _run_partitioned(worker, A, B, C, partitions)
    return C, report


def _as_dd_vector(values) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(values, tuple) and len(values) == 2 and isinstance(values[0], np.ndarray):
        return np.asarray(values[0], dtype=np.float64), np.asarray(values[1], dtype=np.float64)
    hi = np.array([v.hi for v in values], dtype=np.float64)
    lo = np.array([v.lo for v in values], dtype=np.float64)
    return hi, lo


def cascaded_dot(x, y, widths: Optional[SplitWidths] = None,
                 counter: Optional[KernelCounter] = None) -> Tuple[DD, bool]:
    """Cascaded dot product of two DD vectors.

    Args:
        x: Sequence of DD, or a (hi, lo) tuple of arrays
        y: Same length as x
        widths: Split widths (chosen from the length when None)
        counter: Optional instrumentation (ten products are recorded)

    Returns:
        Tuple (value, flagged) where flagged means bin 0 was zero

    Raises:
        ShapeError: If lengths differ

    Example:
        >>> cascaded_dot([DD(1.0, 0.0), DD(2.0 ** -100, 0.0)],
        ...              [DD(0.0, 0.0), DD(1.0, 0.0)])
        (DD(hi=7.888609052210118e-31, lo=0.0), True)
    """
    xh, xl = _as_dd_vector(x)
    yh, yl = _as_dd_vector(y)
    if xh.shape != yh.shape:
        raise ShapeError(f"dot operands differ in length: {len(xh)} vs {len(yh)}")
    k = len(xh)
    widths = widths or select_widths(k)
    params = BlockingParams(kc=widths.k)
    A = MatrixDD(xh[None, :], xl[None, :])
    B = MatrixDD(yh[:, None], yl[:, None])
    bins, sa, sb = cascaded_panel_bins(A, B, widths, params, counter)
    part = combine_bins(bins, sa.scale.exponents, sb.scale.exponents, widths)
    hi, lo = add_parts(0.0, 0.0, float(part.hi[0, 0]), float(part.lo[0, 0]))
    return DD(float(hi), float(lo)), bool(bins.bin0[0, 0] == 0.0)


def sixteen_product_dot(x, y, widths: SplitWidths) -> Tuple[List[Dyadic], int, int]:
    """All sixteen split products of a dot product, summed exactly per bin.

    Bin b collects the products A_i B_j with i + j = b, each weighted by
    sigma_i sigma_j, so the seven values add up to the exact product of the
    cascaded operands at unit scale.

    Returns:
        Tuple (bins 0..6 as Dyadic, x scale exponent, y scale exponent)
    """
    xh, xl = _as_dd_vector(x)
    yh, yl = _as_dd_vector(y)
    if xh.shape != yh.shape:
        raise ShapeError(f"dot operands differ in length: {len(xh)} vs {len(yh)}")
    ex = int(row_scales(xh[None, :], xl[None, :], axis=1)[0])
    ey = int(row_scales(yh[None, :], yl[None, :], axis=1)[0])
    xs = split_arrays(xh, xl, ex, widths)
    ys = split_arrays(yh, yl, ey, widths)
    weights = widths.sigma_exponents
    bins = [Dyadic.from_int(0)] * 7
    for i in range(4):
        for j in range(4):
            weight = Dyadic.from_int(1, weights[i] + weights[j])
            for p in range(len(xh)):
                term = Dyadic.from_float(xs[i][p]) * Dyadic.from_float(ys[j][p]) * weight
                bins[i + j] = bins[i + j] + term
    return bins, ex, ey


def ddgemm_naive(A: MatrixDD, B: MatrixDD, C: Optional[MatrixDD] = None) -> MatrixDD:
    """C += A B entirely in DD arithmetic, summing over p in order.

    Every (i, j) is updated at once per p, which gives the same per-element
    operation sequence as the i, j, p triple loop.
    """
    C = _check_operands(A, B, C)
    hi, lo = C.hi.copy(), C.lo.copy()
    for p in range(A.cols):
        phi, plo = mul_parts(A.hi[:, p:p + 1], A.lo[:, p:p + 1], B.hi[p:p + 1, :], B.lo[p:p + 1, :])
        hi, lo = add_parts(hi, lo, phi, plo)
    C.hi[...] = hi
    C.lo[...] = lo
    return C


def f64_gemm(A: MatrixDD, B: MatrixDD, params: Optional[BlockingParams] = None,
             counter: Optional[KernelCounter] = None) -> MatrixDD:
    """Plain binary64 product of the hi limbs (lo of the result is zero)."""
    require_inner_dims(A.shape, B.shape)
    out = np.zeros((A.rows, B.cols))
    dgemm(A.hi, B.hi, out, params, counter=counter)
    return MatrixDD(out, np.zeros_like(out))
