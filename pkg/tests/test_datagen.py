#!/usr/bin/env python3
"""Tests for the test-matrix generators.

Usage:
    python3 -m pytest tests/test_datagen.py
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from ddcascade import datagen
from ddcascade.cascgemm import ddgemm_naive
from ddcascade.datagen import (
    GenSpec,
    GenSpecError,
    QRBreakdownError,
    gen_illcond,
    gen_uniform,
    gen_widerange,
    householder_qr_dd,
    illcond_operands,
    illcond_quality,
    random_dd_values,
    uniform_operands,
    widerange_operands,
)
from ddcascade.ddcore import add_parts
from ddcascade.exactref import MatrixDD
from ddcascade.matrix_io import content_hash
from ddcascade.validators import is_normalized


class TestGenSpec:
    @pytest.mark.parametrize('args, kwargs', [
        (('gaussian', 4, 4), {}),
        (('uniform', 0, 4), {}),
        (('uniform', 4, 4), {'k': 0}),
        (('uniform', 4, 4), {'seed': -1}),
        (('uniform', 4, 4), {'lo': 2.0, 'hi': 1.0}),
        (('illcond', 4, 4), {}),
        (('illcond', 4, 5), {'tolerance': 1e-9}),
        (('illcond', 4, 4), {'tolerance': -1e-9}),
    ])
    def test_invalid(self, args, kwargs):
        with pytest.raises(GenSpecError):
            GenSpec(*args, **kwargs)

    def test_depth_defaults_to_n(self):
        assert GenSpec('uniform', 3, 5).depth == 5
        assert GenSpec('uniform', 3, 5, k=7).depth == 7

    def test_generator_kind_checked(self):
        with pytest.raises(GenSpecError):
            gen_uniform(GenSpec('widerange', 2, 2))


class TestUniform:
    def test_deterministic(self):
        spec = GenSpec('uniform', 8, 8, seed=7)
        assert gen_uniform(spec).bitwise_equal(gen_uniform(spec))
        assert not gen_uniform(spec).bitwise_equal(gen_uniform(GenSpec('uniform', 8, 8, seed=8)))

    def test_range_and_extended_mantissa(self):
        M = gen_uniform(GenSpec('uniform', 30, 30, seed=1, lo=-1.0, hi=1.0))
        assert is_normalized(M.hi, M.lo).all()
        assert np.all(np.abs(M.hi) <= 1.0)
        assert np.count_nonzero(M.lo) > 800

    def test_degenerate_range_stays_inside(self):
        M = gen_uniform(GenSpec('uniform', 4, 4, seed=2, lo=1.0, hi=1.0))
        assert np.all(M.hi == 1.0)
        assert np.all(M.lo == 0.0)

    def test_operand_shapes(self):
        A, B = uniform_operands(GenSpec('uniform', 3, 5, k=4, seed=0))
        assert A.shape == (3, 4)
        assert B.shape == (4, 5)

    def test_golden_content(self):
        # pins the PCG64 stream and the draw order behind every uniform matrix
        M = gen_uniform(GenSpec('uniform', 4, 3, seed=7))
        assert M.hi[0, :].tolist() == [0.25019093320933394, 0.794427601939151, 0.551371380490387]
        assert content_hash(M) == 'd9922b44e37a8c0576ae9d9fe33b8cacba22828bcb18b7de60cda4be5f59534c'


def test_random_dd_values_normalized(rng):
    hi, lo = random_dd_values(rng, (50, 4), -300, 300)
    assert is_normalized(hi, lo).all()
    assert np.all(hi != 0.0)


class TestWideRange:
    def test_magnitudes_and_line_ranges(self):
        ops = widerange_operands(GenSpec('widerange', 20, 15, k=30, seed=2))
        assert ops.A.shape == (20, 30)
        assert ops.B.shape == (30, 15)
        for M in (ops.A, ops.B):
            mag = np.abs(M.hi + M.lo)
            assert mag.min() >= 1e-60
            assert mag.max() <= 1e20
        _, exps = np.frexp(ops.A.hi)
        assert np.all(exps - 1 >= ops.row_ranges[:, :1])
        assert np.all(exps - 1 <= ops.row_ranges[:, 1:])

    def test_sign_conventions_per_line(self):
        A, _ = gen_widerange(GenSpec('widerange', 40, 4, k=25, seed=3))
        positive = np.all(A.hi > 0.0, axis=1)
        negative = np.all(A.hi < 0.0, axis=1)
        mixed = ~positive & ~negative
        assert positive.any() and negative.any() and mixed.any()

    def test_golden_content(self):
        ops = widerange_operands(GenSpec('widerange', 3, 4, k=5, seed=2))
        assert ops.row_ranges.tolist() == [[-130, 22], [-171, -120], [-90, 16]]
        assert ops.col_ranges.tolist() == [[-189, -61], [-46, -13], [-129, -79], [-114, 38]]
        assert content_hash(ops.A) == '4631b1ce8156e1a2b48d389ee4113cf400f7940c4e08474ac3b3b79d4a7d2a65'
        assert content_hash(ops.B) == '92f4f06b28d5288f77087fd6c87eb3689fe3b7993a410d518ea2809f72ea2099'


class TestHouseholder:
    def test_orthogonal_in_dd(self):
        M = gen_uniform(GenSpec('uniform', 12, 12, seed=5))
        Q = householder_qr_dd(M)
        QtQ = ddgemm_naive(Q.transpose(), Q)
        hi, lo = add_parts(QtQ.hi, QtQ.lo, -np.eye(12), np.zeros((12, 12)))
        assert np.max(np.abs(hi + lo)) < 1e-28

    def test_one_by_one(self):
        Q = householder_qr_dd(MatrixDD.from_float([[-3.0]]))
        assert Q.hi.tolist() == [[1.0]]

    def test_zero_column_breaks_down(self):
        with pytest.raises(QRBreakdownError):
            householder_qr_dd(MatrixDD.from_float([[1.0, 0.0], [1.0, 0.0]]))

    def test_needs_square(self):
        with pytest.raises(GenSpecError):
            householder_qr_dd(MatrixDD.zeros(2, 3))

    @pytest.mark.slow
    def test_orthogonal_at_full_size(self):
        n = 240
        Q = householder_qr_dd(gen_uniform(GenSpec('uniform', n, n, seed=3)))
        QtQ = ddgemm_naive(Q.transpose(), Q)
        hi, lo = add_parts(QtQ.hi, QtQ.lo, -np.eye(n), np.zeros((n, n)))
        assert np.max(np.abs(hi + lo)) < 1e-27


class TestIllCond:
    def test_planted_structure(self):
        t = 1e-19
        A, B, C = gen_illcond(GenSpec('illcond', 16, 16, seed=1, tolerance=t))
        planted = C.hi == 1.0
        assert planted.sum(axis=0).tolist() == [1] * 16
        others = np.abs(C.hi[~planted])
        assert np.all(others > t) and np.all(others < 10 * t)
        assert np.all(C.lo == 0.0)

        AB = ddgemm_naive(A, B)
        hi, lo = add_parts(AB.hi, AB.lo, -C.hi, -C.lo)
        assert np.max(np.abs(hi + lo)) < 1e-28

    def test_quality_reflects_tolerance(self):
        A, B, C = gen_illcond(GenSpec('illcond', 16, 16, seed=2, tolerance=1e-19))
        assert illcond_quality(A, B, C) > 1e17

    @pytest.mark.slow
    def test_quality_floor_at_full_size(self):
        A, B, C = gen_illcond(GenSpec('illcond', 240, 240, seed=1, tolerance=1e-19))
        assert illcond_quality(A, B, C) >= 1e15

    def test_retries_with_next_seed(self, monkeypatch):
        real = datagen._illcond_once

        def flaky(spec, seed):
            if seed == spec.seed:
                raise QRBreakdownError('planted failure')
            return real(spec, seed)

        monkeypatch.setattr(datagen, '_illcond_once', flaky)
        ops = illcond_operands(GenSpec('illcond', 4, 4, seed=10, tolerance=1e-9))
        assert ops.seed == 11

    def test_gives_up_after_retries(self, monkeypatch):
        def broken(spec, seed):
            raise QRBreakdownError('always')

        monkeypatch.setattr(datagen, '_illcond_once', broken)
        with pytest.raises(QRBreakdownError):
            illcond_operands(GenSpec('illcond', 4, 4, seed=0, tolerance=1e-9), max_retries=2)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
