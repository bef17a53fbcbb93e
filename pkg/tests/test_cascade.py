#!/usr/bin/env python3
"""Tests for split-width selection, scaling and the four-way split.

Usage:
    python3 -m pytest tests/test_cascade.py
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from ddcascade.cascade import (
    SplitWidths,
    WidthError,
    reconstruct,
    row_scale,
    row_scales,
    select_widths,
    split_arrays,
    split_panel_a,
    split_panel_b,
    split_scalar,
)
from ddcascade.datagen import random_dd_values
from ddcascade.ddcore import DD
from ddcascade.exactref import MatrixDD, aligned_sum
from ddcascade.validators import NonFiniteError


class TestSelectWidths:
    @pytest.mark.parametrize('k, expected', [
        (256, (22, 21, 21)),
        (128, (23, 22, 21)),
        (64, (23, 22, 22)),
        (1, (26, 25, 25)),
    ])
    def test_widths(self, k, expected):
        w = select_widths(k)
        assert (w.c0, w.c1, w.c2) == expected

    def test_kc_256_precision(self):
        w = select_widths(256)
        assert w.D2 == 64
        assert w.eps_cascaded == 2.0 ** -117
        assert w.sigma_exponents == (0, -22, -43, -64)

    @pytest.mark.parametrize('k', [1, 2, 3, 100, 129, 255, 256])
    def test_budgets_hold(self, k):
        select_widths(k).check()

    def test_out_of_range(self):
        with pytest.raises(WidthError):
            select_widths(0)
        with pytest.raises(WidthError):
            select_widths(257)

    def test_depth_too_large_for_106_bits(self):
        with pytest.raises(WidthError):
            select_widths(2 ** 30, k_max=2 ** 31)

    def test_check_rejects_oversized_bin0(self):
        with pytest.raises(WidthError):
            SplitWidths(256, 23, 21, 21).check()


class TestRowScales:
    def test_example(self):
        assert row_scale([DD(0.75, 0.0), DD(-3.5, 0.0)]) == 2

    def test_power_of_two_with_opposite_tail_is_lowered(self):
        hi = np.array([[2.0, 0.5]])
        assert row_scales(hi, np.array([[-2.0 ** -60, 0.0]]))[0] == 1
        assert row_scales(hi, np.array([[2.0 ** -60, 0.0]]))[0] == 2

    def test_every_maximum_must_have_opposite_tail(self):
        hi = np.array([[2.0, -2.0]])
        lo = np.array([[-2.0 ** -60, -2.0 ** -60]])
        assert row_scales(hi, lo)[0] == 2

    def test_zero_row_and_columns(self):
        hi = np.array([[0.0, 0.0], [3.0, 0.0]])
        assert row_scales(hi, np.zeros_like(hi)).tolist() == [0, 2]
        assert row_scales(hi, np.zeros_like(hi), axis=0).tolist() == [2, 0]

    def test_empty_row_rejected(self):
        with pytest.raises(WidthError):
            row_scale([])


class TestSplit:
    def test_split_scalar_example(self):
        assert split_scalar(DD(1.0, 0.0), 1, select_widths(256)) == (0.5, 0.0, 0.0, 0.0)

    def test_split_scalar_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            split_scalar(DD(float('nan'), 0.0), 0, select_widths(256))

    def test_tiny_value_lands_in_tail(self):
        w = select_widths(2)
        chi = split_scalar(DD(2.0 ** -100, 0.0), 1, w)
        assert chi[:3] == (0.0, 0.0, 0.0)
        assert chi[3] == 2.0 ** (-101 + w.D2)

    @pytest.mark.parametrize('k', [1, 17, 256])
    def test_splits_on_grid_and_exact(self, rng, k):
        w = select_widths(k)
        hi, lo = random_dd_values(rng, (20, k), -30, 30)
        e = row_scales(hi, lo)
        chi = split_arrays(hi, lo, e[:, None], w)
        assert np.max(np.abs(chi[0])) <= 1.0
        for s, bits in zip(chi[:3], (w.c0, w.c1, w.c2)):
            scaled = np.ldexp(s, bits)
            assert np.array_equal(scaled, np.trunc(scaled))

        limbs = [hi, lo] + [-np.ldexp(s, e[:, None] + sigma) for s, sigma in zip(chi, w.sigma_exponents)]
        num, base = aligned_sum(limbs, axis=1)
        for i in range(20):
            # only the tail sum rounds, by at most half an ulp below 1
            t = int(e[i]) - w.D2 - 54
            b = int(base[i])
            biggest = max(abs(int(v)) for v in num[i])
            assert biggest << max(b - t, 0) <= 1 << max(t - b, 0)

    def test_reconstruct_short_mantissas_exactly(self, rng):
        hi = np.round(rng.uniform(-1.0, 1.0, size=(6, 32)) * 2.0 ** 40) / 2.0 ** 40
        A = MatrixDD.from_float(hi)
        panel = split_panel_a(A, select_widths(32))
        back = reconstruct(panel)
        assert np.array_equal(back.hi, A.hi)
        assert np.array_equal(back.lo, np.zeros_like(hi))

    def test_panel_b_derived_splits(self, rng):
        w = select_widths(16)
        bhi, blo = random_dd_values(rng, (16, 5), -10, 10)
        sb = split_panel_b(MatrixDD(bhi, blo), w)
        b0, b1, b2, b3, b4, b5, b6 = sb.splits
        assert len(sb.splits) == 7
        assert sb.k == 16 and sb.n == 5
        # b6 is the whole scaled value in one double
        scaled = np.ldexp(bhi, -sb.scale.exponents[None, :])
        assert np.allclose(b6, scaled, rtol=2.0 ** -50, atol=0.0)
        assert np.array_equal(b4, b2 + np.ldexp(b3, -w.c2))

    def test_panel_deeper_than_widths_rejected(self):
        with pytest.raises(WidthError):
            split_panel_a(MatrixDD.zeros(2, 20), select_widths(16))

    def test_panel_with_nan_rejected(self):
        A = MatrixDD(np.array([[np.nan]]), np.array([[0.0]]))
        with pytest.raises(NonFiniteError):
            split_panel_a(A, select_widths(1))


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
