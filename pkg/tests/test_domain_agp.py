import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from glyco.agp import Thresholds, TrVector, compute_tr_hard, compute_tr_soft
from glyco.autodiff import Tensor, parameter
from glyco.domain import (
    CgmGrid,
    SmbgSample,
    assemble_input,
    build_positional_encoding,
    denormalize_glucose,
    normalize_glucose,
)
from glyco.errors import DimensionError, ParameterError, ValidationError


class TestPositionalEncoding:
    def test_origin_equals_P(self):
        pe = build_positional_encoding(3, 5, 16)
        assert pe.m_p[0, 0] == pytest.approx(16.0, abs=1e-12)

    def test_separable(self):
        m = build_positional_encoding(6, 10, 8).m_p
        diffs = m[:, 3] - m[:, 7]
        np.testing.assert_allclose(diffs, diffs[0], atol=1e-12)

    def test_matches_direct_transcription(self):
        D, T, P = 2, 4, 4

        def pe(pos, idx):
            k = idx // 2
            angle = pos / 10000 ** (2 * k / P)
            return math.sin(angle) if idx % 2 == 0 else math.cos(angle)

        expected = np.array([[sum(pe(i, p) + pe(j, p) for p in range(P)) for j in range(T)] for i in range(D)])
        np.testing.assert_allclose(build_positional_encoding(D, T, P).m_p, expected, atol=1e-12)

    def test_bounds_and_determinism(self):
        a = build_positional_encoding(14, 288, 16).m_p
        b = build_positional_encoding(14, 288, 16).m_p
        assert np.array_equal(a, b)
        assert np.all(np.abs(a) <= 2 * 16)

    def test_odd_P(self):
        with pytest.raises(ParameterError):
            build_positional_encoding(2, 2, 5)


class TestNormalize:
    @pytest.mark.parametrize("mg,unit", [(0, 0.0), (400, 1.0), (180, 0.45), (600, 1.5)])
    def test_values(self, mg, unit):
        assert normalize_glucose(mg) == pytest.approx(unit)

    def test_negative(self):
        with pytest.raises(ValidationError):
            normalize_glucose(-1)

    def test_inverse(self):
        assert denormalize_glucose(normalize_glucose(123.0)) == pytest.approx(123.0)


class TestAssembleInput:
    pe = build_positional_encoding(2, 4, 4)

    def test_fully_missing(self):
        s = SmbgSample(np.zeros((2, 4)), np.ones((2, 4)))
        x = assemble_input(s, self.pe)
        assert x.shape == (3, 2, 4)
        assert np.all(x[0] == 0) and np.all(x[1] == 1)
        np.testing.assert_array_equal(x[2], self.pe.m_p)

    def test_single_observation(self):
        m_s = np.zeros((2, 4))
        m_s[0, 0] = 400.0
        s = SmbgSample(m_s, (m_s == 0).astype(float))
        x = assemble_input(s, self.pe)
        assert x[0, 0, 0] == 1.0 and np.count_nonzero(x[0]) == 1

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        grid = rng.uniform(40, 400, size=(2, 4))
        s = SmbgSample.from_observations(grid, rng.random((2, 4)) < 0.5)
        x = assemble_input(s, self.pe)
        obs = s.observed
        np.testing.assert_allclose(denormalize_glucose(x[0][obs]), s.m_s[obs], atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            assemble_input(SmbgSample(np.zeros((3, 4)), np.ones((3, 4))), self.pe)

    def test_complementarity_enforced(self):
        with pytest.raises(ValidationError):
            SmbgSample(np.array([[100.0, 0.0]]), np.array([[1.0, 1.0]]))


class TestCgmGrid:
    def test_range(self):
        with pytest.raises(ValidationError):
            CgmGrid(np.full((2, 2), 700.0))
        with pytest.raises(ValidationError):
            CgmGrid(np.zeros((2, 2)))


class TestHardCounting:
    def test_all_in_range(self):
        assert compute_tr_hard(np.full((14, 288), 100.0)) == TrVector(0, 1, 0)

    def test_boundaries_inclusive(self):
        g = np.array([[70.0, 180.0, 70.0, 180.0]])
        assert compute_tr_hard(g) == TrVector(0, 1, 0)

    def test_direct_count(self):
        assert compute_tr_hard(np.array([[60.0, 100.0, 200.0, 100.0]])) == TrVector(0.25, 0.5, 0.25)

    def test_accepts_grid(self):
        assert compute_tr_hard(CgmGrid(np.full((1, 2), 250.0))).tar == 1.0

    def test_empty(self):
        with pytest.raises(ParameterError):
            compute_tr_hard(np.zeros((0, 4)))

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 12)), elements=st.floats(40, 400)))
    def test_sum_one_and_permutation_invariant(self, g):
        tr = compute_tr_hard(g)
        assert tr.tar + tr.tir + tr.tbr == pytest.approx(1.0, abs=1e-15)
        perm = np.random.default_rng(0).permutation(g.ravel()).reshape(g.shape)
        assert compute_tr_hard(perm) == tr

    def test_thresholds_validated(self):
        with pytest.raises(ParameterError):
            Thresholds(180, 70)


def separated_grid(rng, shape, margin=40.0):
    """Values at least ``margin`` mg/dL away from both thresholds."""
    pools = [(1.0, 70.0 - margin), (70.0 + margin, 180.0 - margin), (180.0 + margin, 400.0)]
    which = rng.integers(0, 3, size=shape)
    lo = np.choose(which, [p[0] for p in pools])
    hi = np.choose(which, [p[1] for p in pools])
    return rng.uniform(lo, hi)


class TestSoftCounting:
    def test_midpoint(self):
        tr = compute_tr_soft(Tensor(np.full((2, 3), 180.0)))
        assert tr.data[0] == pytest.approx(0.5)

    def test_matches_hard_when_separated(self):
        rng = np.random.default_rng(7)
        g = separated_grid(rng, (14, 288))
        soft = compute_tr_soft(Tensor(g), temperature=2.0).data
        hard = compute_tr_hard(g).as_array()
        assert np.max(np.abs(soft - hard)) < 1e-6

    def test_single_cell_gradient(self):
        g = np.full((2, 4), 100.0)
        g[1, 2] = 180.0
        x = parameter(g)
        temp = 5.0
        compute_tr_soft(x, temperature=temp)[0].backward()
        assert x.grad[1, 2] == pytest.approx(0.25 / (8 * temp), rel=1e-12)

    def test_simplex(self):
        rng = np.random.default_rng(1)
        tr = compute_tr_soft(Tensor(rng.uniform(40, 400, size=(3, 5, 7)))).data
        assert tr.shape == (3, 3)
        np.testing.assert_allclose(tr.sum(axis=1), 1.0, atol=1e-12)

    def test_monotone_convergence(self):
        rng = np.random.default_rng(11)
        g = separated_grid(rng, (14, 288), margin=10.0)
        hard = compute_tr_hard(g).as_array()
        errs = [np.max(np.abs(compute_tr_soft(Tensor(g), temperature=t).data - hard)) for t in (8, 4, 2, 1)]
        assert all(a > b for a, b in zip(errs, errs[1:]))

    def test_bad_temperature(self):
        with pytest.raises(ParameterError):
            compute_tr_soft(Tensor(np.ones((1, 1))), temperature=0.0)
