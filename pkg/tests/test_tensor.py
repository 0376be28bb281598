import numpy as np
import pytest

from binsr.tensor import (
    ConvSpec, RunningStats, ShapeError, activation, add, batch_norm, conv2d,
    conv2d_input_grad, conv2d_weight_grad, pixel_shuffle, pixel_unshuffle, scale,
    sub, tensor, transposed_conv2d,
)
from oracles import conv2d_loops, pixel_shuffle_loops, rel_err, transposed_conv_zero_stuff


class TestConv2d:
    def test_box_sum(self):
        x = np.ones((1, 1, 3, 3), np.float32)
        w = np.ones((1, 1, 3, 3), np.float32)
        y = conv2d(x, w, spec=ConvSpec(1, 1, 3, 1, 1))
        assert y[0, 0, 1, 1] == 9.0
        for i, j in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert y[0, 0, i, j] == 4.0

    def test_zero_weights(self, rng):
        x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
        y = conv2d(x, np.zeros((4, 3, 3, 3), np.float32), spec=ConvSpec(3, 4, 3, 1, 1))
        assert not y.any()

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        y = conv2d(x, w, b, ConvSpec(3, 4, 3, 1, 1))
        assert rel_err(y, conv2d_loops(x, w, b, 1, 1)) < 1e-5

    def test_random_instances(self, rng):
        for _ in range(100):
            c, f, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
            s, p = rng.integers(1, 3), rng.integers(0, 2)
            h, w_ = rng.integers(k, 7), rng.integers(k, 7)
            x = rng.standard_normal((1, c, h, w_)).astype(np.float32)
            w = rng.standard_normal((f, c, k, k)).astype(np.float32)
            y = conv2d(x, w, spec=ConvSpec(c, f, k, s, p))
            assert rel_err(y, conv2d_loops(x, w, None, s, p)) < 1e-5

    def test_shape_errors(self):
        x = np.zeros((1, 2, 4, 4), np.float32)
        with pytest.raises(ShapeError):
            conv2d(x, np.zeros((1, 3, 3, 3), np.float32), spec=ConvSpec(3, 1, 3))
        with pytest.raises(ShapeError):
            conv2d(x, np.zeros((1, 2, 5, 5), np.float32), spec=ConvSpec(2, 1, 5))

    def test_pure(self, rng):
        x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        x0, w0 = x.copy(), w.copy()
        a = conv2d(x, w, spec=ConvSpec(2, 3, 3, 1, 1))
        b = conv2d(x, w, spec=ConvSpec(2, 3, 3, 1, 1))
        assert np.array_equal(a, b)
        assert np.array_equal(x, x0) and np.array_equal(w, w0)

    @pytest.mark.parametrize("stride,pad,h", [(1, 1, 6), (2, 1, 7), (2, 0, 8), (3, 2, 9)])
    def test_gradients_are_adjoints(self, rng, stride, pad, h):
        # <conv(x), g> = <x, dx(g)> and = <w, dw(g)>
        spec = ConvSpec(2, 3, 3, stride, pad)
        x = rng.standard_normal((2, 2, h, h))
        w = rng.standard_normal((3, 2, 3, 3))
        y = conv2d(x, w, spec=spec)
        g = rng.standard_normal(y.shape)
        lhs = np.sum(y * g)
        assert np.isclose(lhs, np.sum(x * conv2d_input_grad(g, w, spec, (h, h))))
        assert np.isclose(lhs, np.sum(w * conv2d_weight_grad(x, g, spec)))


class TestPixelShuffle:
    def test_definition(self):
        x = tensor([1, 2, 3, 4], (1, 4, 1, 1))
        y = pixel_shuffle(x, 2)
        assert y.shape == (1, 1, 2, 2)
        assert y[0, 0].tolist() == [[1, 2], [3, 4]]

    def test_identity_r1(self, rng):
        x = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
        assert np.array_equal(pixel_shuffle(x, 1), x)

    def test_random_vs_loops(self, rng):
        for _ in range(100):
            r = int(rng.integers(1, 4))
            x = rng.standard_normal((1, r * r * int(rng.integers(1, 3)), 3, 2)).astype(np.float32)
            y = pixel_shuffle(x, r)
            assert np.array_equal(y, pixel_shuffle_loops(x, r))
            assert np.isclose(y.sum(dtype=np.float64), x.sum(dtype=np.float64))
            assert np.array_equal(np.sort(y.ravel()), np.sort(x.ravel()))
            assert np.array_equal(pixel_unshuffle(y, r), x)

    def test_bad_channels(self):
        with pytest.raises(ShapeError):
            pixel_shuffle(np.zeros((1, 3, 2, 2), np.float32), 2)


class TestTransposedConv:
    def test_identity(self, rng):
        x = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        y = transposed_conv2d(x, np.ones((1, 1, 1, 1), np.float32), spec=ConvSpec(1, 1, 1, 1, 0))
        assert np.array_equal(y, x)

    def test_stride2_doubles(self):
        x = np.ones((1, 1, 2, 2), np.float32)
        y = transposed_conv2d(x, np.ones((1, 1, 4, 4), np.float32), spec=ConvSpec(1, 1, 4, 2, 1))
        assert y.shape == (1, 1, 4, 4)
        y = transposed_conv2d(x, np.ones((1, 1, 2, 2), np.float32), spec=ConvSpec(1, 1, 2, 2, 0))
        assert y.shape == (1, 1, 4, 4)

    def test_random_vs_zero_stuffing(self, rng):
        for _ in range(100):
            cin, cout = rng.integers(1, 4), rng.integers(1, 4)
            k, s = int(rng.integers(1, 5)), int(rng.integers(1, 3))
            p = int(rng.integers(0, k))
            h, w_ = rng.integers(1, 5), rng.integers(1, 5)
            if (h - 1) * s - 2 * p + k < 1 or (w_ - 1) * s - 2 * p + k < 1:
                continue
            x = rng.standard_normal((1, cin, h, w_)).astype(np.float32)
            w = rng.standard_normal((cin, cout, k, k)).astype(np.float32)
            y = transposed_conv2d(x, w, spec=ConvSpec(cin, cout, k, s, p))
            assert rel_err(y, transposed_conv_zero_stuff(x, w, s, p)) < 1e-5


class TestActivation:
    def test_prelu(self):
        x = tensor([-2, 3], (1, 1, 1, 2))
        y = activation(x, "prelu", np.array([0.1], np.float32))
        assert np.allclose(y.ravel(), [-0.2, 3])

    def test_relu_negative(self, rng):
        x = -np.abs(rng.standard_normal((1, 2, 3, 3))).astype(np.float32)
        assert not activation(x, "relu").any()

    def test_slope_one_identity(self, rng):
        x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        assert np.array_equal(activation(x, "leaky_relu", 1.0), x)
        assert np.array_equal(activation(x, "prelu", np.ones(2, np.float32)), x)


class TestBatchNorm:
    def _stats(self, c):
        return RunningStats(np.zeros(c, np.float32), np.ones(c, np.float32))

    def test_fixed_point(self, rng):
        x = rng.standard_normal((4, 3, 5, 5))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        x = x.astype(np.float32)
        y, _ = batch_norm(x, np.ones(3, np.float32), np.zeros(3, np.float32), self._stats(3), "train")
        assert np.allclose(y, x, atol=1e-5)

    def test_beta_shift(self, rng):
        x = (rng.standard_normal((4, 3, 5, 5)) * 3 + 2).astype(np.float32)
        beta = np.array([0.5, -1.0, 2.0], np.float32)
        y, new = batch_norm(x, np.ones(3, np.float32), beta, self._stats(3), "train")
        assert np.allclose(y.mean(axis=(0, 2, 3)), beta, atol=1e-5)
        assert np.allclose(new.mean, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-5)

    def test_infer_affine(self, rng):
        st = RunningStats(np.array([1.0, 2.0], np.float32), np.array([4.0, 0.25], np.float32))
        g, b = np.array([2.0, 1.0], np.float32), np.array([0.0, 1.0], np.float32)
        x1 = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        x2 = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        f = lambda x: batch_norm(x, g, b, st, "infer")[0]
        assert np.array_equal(f(x1), f(x1))
        # affine: f(x1) - f(x2) is linear in x1 - x2
        assert np.allclose(f(x1) - f(x2), (x1 - x2) * (g / np.sqrt(st.var + 1e-5)).reshape(1, -1, 1, 1), atol=1e-5)

    def test_empty_batch(self):
        with pytest.raises(ShapeError):
            batch_norm(np.zeros((0, 2, 3, 3), np.float32), np.ones(2, np.float32),
                       np.zeros(2, np.float32), self._stats(2), "train")


class TestElementwise:
    def test_identities(self, rng):
        a = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        b = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        assert np.array_equal(add(a, np.zeros_like(a)), a)
        assert not sub(a, a).any()
        assert np.allclose(sub(add(a, b), b), a, atol=1e-6)
        assert np.array_equal(scale(a, 1.0), a)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))
