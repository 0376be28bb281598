import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from binsr.binary import (
    PackedBits, alpha_deterministic, approximation_error, binarize,
    effective_weights, pack, unpack,
)


class TestBinarize:
    def test_values(self):
        assert binarize(0.3) == 1.0
        assert binarize(-0.2) == -1.0

    def test_zero_is_positive(self):
        assert binarize(0.0) == 1.0
        assert binarize(-0.0) == 1.0
        assert np.all(binarize(np.zeros(5)) == 1.0)

    def test_idempotent(self, rng):
        w = rng.standard_normal(1000)
        b = binarize(w)
        assert np.array_equal(binarize(b * 1.0), b)

    @given(arrays(np.float64, 20, elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3))
    def test_positive_scaling(self, w, c):
        assert np.array_equal(binarize(c * w), binarize(w))


class TestAlpha:
    def test_hand_value(self):
        w = np.array([0.5, -1.5, 1.0, -1.0]).reshape(1, 1, 2, 2)
        assert alpha_deterministic(w)[0] == 1.0

    def test_zero_channel(self):
        assert alpha_deterministic(np.zeros((2, 1, 3, 3)))[0] == 0.0

    def test_homogeneous(self, rng):
        w = rng.standard_normal((4, 3, 3, 3))
        assert np.allclose(alpha_deterministic(2.5 * w), 2.5 * alpha_deterministic(w))

    def test_length_matches_out_channels(self, rng):
        assert alpha_deterministic(rng.standard_normal((7, 2, 3, 3))).shape == (7,)

    def test_optimal_against_perturbations(self, rng):
        w = rng.standard_normal((16, 8, 3, 3))
        b = binarize(w)
        a = alpha_deterministic(w)
        best = approximation_error(w, a, b)
        for eps in (0.01, 0.1):
            for sgn in (1, -1):
                assert np.all(best <= approximation_error(w, a * (1 + sgn * eps), b))


class TestPacking:
    def test_msb_first(self):
        signs = np.array([1, -1, 1, 1, -1, -1, -1, -1], np.float32).reshape(1, 8, 1, 1)
        p = pack(signs)
        assert p.rows.tolist() == [[0xB0]]

    def test_padding_bits_zero(self):
        p = pack(np.array([1, 1, 1], np.float32).reshape(1, 3, 1, 1))
        assert p.rows.shape == (1, 1)
        assert p.rows[0, 0] == 0b11100000

    def test_row_per_channel(self):
        p = pack(np.ones((3, 1, 3, 3), np.float32))
        assert p.rows.shape == (3, 2)
        assert np.all(p.rows[:, 1] == 0x80)

    def test_roundtrip(self, rng):
        s = binarize(rng.standard_normal((4, 3, 3, 3))).astype(np.float32)
        p = pack(s)
        assert np.array_equal(unpack(p), s)
        assert PackedBits.frombytes(p.shape, p.tobytes()) == p

    @settings(max_examples=50)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
    def test_roundtrip_shapes(self, f, c, k, seed):
        s = np.where(np.random.default_rng(seed).random((f, c, k, k)) < 0.5, -1.0, 1.0)
        assert np.array_equal(unpack(pack(s), np.float64), s)

    def test_rejects_non_signs(self):
        with pytest.raises(ValueError):
            pack(np.array([1.0, 0.0]).reshape(1, 2, 1, 1))


class TestEffectiveWeights:
    def test_all_plus(self):
        assert np.all(effective_weights(np.array([2.0]), np.ones((1, 2, 3, 3))) == 2.0)

    def test_zero_alpha(self):
        assert not effective_weights(np.zeros(2), np.ones((2, 1, 3, 3))).any()

    def test_closed_form_beats_sampled_scales(self, rng):
        w = rng.standard_normal((1, 4, 3, 3))
        b = binarize(w)
        a = alpha_deterministic(w)
        best = approximation_error(w, a, b)[0]
        for c in rng.uniform(0, 3, 20):
            assert best <= approximation_error(w, [c], b)[0]
