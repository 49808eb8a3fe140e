"""Convolution, fractional-stride upsampling and batch norm against
independent brute-force oracles and finite differences."""

from fractions import Fraction

import numpy as np
import pytest

from lapir.layers import (BatchNormParams, ConvParams, TransposedConvParams,
                          batch_norm, conv2d, he_init, insert_positions,
                          make_batch_norm, make_conv, make_transposed_conv,
                          transposed_conv, zero_insert)
from lapir.tensor import Tensor, grad_check, mul, tmean


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


def conv_reference(x, w, b, pad):
    """Six-loop direct convolution (zero padding), the oracle."""
    n, c, h, ww = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, ww + 2 * pad - kw + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i + u, j + v] * w[oi, ci, u, v]
                    out[ni, oi, i, j] = acc + b[0, oi, 0, 0]
    return out


class TestConv:
    def test_matches_bruteforce(self):
        x = rand((2, 3, 5, 6), 1)
        w = rand((4, 3, 3, 3), 2)
        b = rand((1, 4, 1, 1), 3)
        p = ConvParams(weight=Tensor(w), bias=Tensor(b), padding=1)
        out = conv2d(Tensor(x), p)
        np.testing.assert_allclose(out.data, conv_reference(x, w, b, 1),
                                   rtol=1e-12, atol=1e-12)

    def test_one_by_one_identity(self):
        x = rand((1, 1, 4, 4), 4)
        p = ConvParams(weight=Tensor(np.ones((1, 1, 1, 1))),
                       bias=Tensor(np.zeros((1, 1, 1, 1))), padding=0)
        np.testing.assert_array_equal(conv2d(Tensor(x), p).data, x)

    def test_gradients(self):
        x = Tensor(rand((2, 2, 4, 4), 5))
        w = Tensor(rand((3, 2, 3, 3), 6))
        b = Tensor(rand((1, 3, 1, 1), 7))

        def through_input(t):
            p = ConvParams(weight=Tensor(w.data), bias=Tensor(b.data), padding=1)
            return tmean(mul(conv2d(t, p), conv2d(t, p)))

        def through_weight(t):
            p = ConvParams(weight=t, bias=Tensor(b.data), padding=1)
            return tmean(mul(conv2d(Tensor(x.data), p), conv2d(Tensor(x.data), p)))

        def through_bias(t):
            p = ConvParams(weight=Tensor(w.data), bias=t, padding=1)
            out = conv2d(Tensor(x.data), p)
            return tmean(mul(out, out))

        assert grad_check(through_input, x) < 1e-6
        assert grad_check(through_weight, w) < 1e-6
        assert grad_check(through_bias, b) < 1e-6

    def test_make_conv_defaults(self):
        p = make_conv(3, 8, 3, rng_seed=0)
        assert p.weight.shape == (8, 3, 3, 3)
        assert p.padding == 1
        np.testing.assert_array_equal(p.bias.data, np.zeros((1, 8, 1, 1)))


class TestInsertPositions:
    def test_integer_stride_worked_case(self):
        # 6 samples, doubling: 11-wide grid with sources at even indices
        length, idx = insert_positions(6, Fraction(2))
        assert length == 11
        assert list(idx) == [0, 2, 4, 6, 8, 10]

    def test_fractional_stride_worked_case(self):
        # 6 samples at stride 3/2: 9-wide grid, uneven spacing
        length, idx = insert_positions(6, Fraction(3, 2))
        assert length == 9
        assert list(idx) == [0, 2, 3, 5, 6, 8]

    def test_grid_size_law_sweep(self):
        from math import ceil

        for m in range(2, 65):
            for f in (Fraction(1), Fraction(5, 4), Fraction(3, 2),
                      Fraction(2), Fraction(3)):
                length, idx = insert_positions(m, f)
                assert length == ceil(f * (m - 1)) + 1
                assert len(idx) == m
                # positions are strictly increasing and inside the grid;
                # the final row may stay empty (e.g. m=2, f=5/4)
                assert idx[0] == 0 and idx[-1] <= length - 1
                assert np.all(np.diff(idx) >= 1)

    def test_zero_insert_values(self):
        x = rand((1, 2, 3, 4), 8)
        out = zero_insert(Tensor(x), Fraction(3, 2))
        lh, ih = insert_positions(3, Fraction(3, 2))
        lw, iw = insert_positions(4, Fraction(3, 2))
        assert out.shape == (1, 2, lh, lw)
        expected = np.zeros((1, 2, lh, lw))
        expected[:, :, np.asarray(ih)[:, None], np.asarray(iw)[None, :]] = x
        np.testing.assert_array_equal(out.data, expected)


class TestTransposedConv:
    def reference(self, x, w, b, f, pad):
        """Zero-grid then direct convolution, built from scratch here."""
        n, c, h, ww = x.shape
        lh, ih = insert_positions(h, f)
        lw, iw = insert_positions(ww, f)
        grid = np.zeros((n, c, lh, lw))
        grid[:, :, np.asarray(ih)[:, None], np.asarray(iw)[None, :]] = x
        return conv_reference(grid, w, b, pad)

    @pytest.mark.parametrize("f", [Fraction(1), Fraction(3, 2), Fraction(2)])
    def test_matches_bruteforce(self, f):
        x = rand((1, 2, 4, 5), 9)
        w = rand((3, 2, 3, 3), 10)
        b = rand((1, 3, 1, 1), 11)
        p = TransposedConvParams(weight=Tensor(w), bias=Tensor(b),
                                 stride=(f, f), padding=1)
        out = transposed_conv(Tensor(x), p)
        np.testing.assert_allclose(out.data, self.reference(x, w, b, f, 1),
                                   rtol=1e-12, atol=1e-12)

    def test_output_size_law(self):
        from math import ceil

        k, pad = 3, 1
        for m in (2, 5, 8, 13, 21, 64):
            for f in (Fraction(1), Fraction(5, 4), Fraction(3, 2),
                      Fraction(2), Fraction(3)):
                p = make_transposed_conv(1, 1, k, (f, f), rng_seed=0)
                out = transposed_conv(Tensor(rand((1, 1, m, m), 12)), p)
                side = ceil(f * (m - 1)) + 1 + (k - 1) - 2 * pad
                assert out.shape == (1, 1, side, side), (m, f)

    def test_per_axis_strides(self):
        p = make_transposed_conv(1, 1, 3, (Fraction(2), Fraction(3, 2)), rng_seed=1)
        out = transposed_conv(Tensor(rand((1, 1, 4, 6), 13)), p)
        assert out.shape == (1, 1, 7, 9)  # ceil(2*3)+1 = 7, ceil(1.5*5)+1 = 9

    def test_stride_override_argument(self):
        p = make_transposed_conv(1, 1, 3, (Fraction(2), Fraction(2)), rng_seed=2)
        out = transposed_conv(Tensor(rand((1, 1, 4, 4), 14)), p,
                              stride=(Fraction(3), Fraction(3)))
        assert out.shape == (1, 1, 10, 10)

    def test_stride_below_one_rejected(self):
        with pytest.raises(ValueError, match="stride"):
            make_transposed_conv(1, 1, 3, (Fraction(1, 2), Fraction(1)), rng_seed=3)

    def test_gradients(self):
        f = Fraction(3, 2)
        x = Tensor(rand((1, 2, 3, 3), 15))
        w = Tensor(rand((2, 2, 3, 3), 16))

        def through_input(t):
            p = TransposedConvParams(weight=Tensor(w.data),
                                     bias=Tensor(np.zeros((1, 2, 1, 1))),
                                     stride=(f, f), padding=1)
            out = transposed_conv(t, p)
            return tmean(mul(out, out))

        def through_weight(t):
            p = TransposedConvParams(weight=t,
                                     bias=Tensor(np.zeros((1, 2, 1, 1))),
                                     stride=(f, f), padding=1)
            out = transposed_conv(Tensor(x.data), p)
            return tmean(mul(out, out))

        assert grad_check(through_input, x) < 1e-6
        assert grad_check(through_weight, w) < 1e-6


class TestBatchNorm:
    def test_train_forward_matches_numpy(self):
        x = rand((4, 3, 5, 5), 17)
        p = make_batch_norm(3)
        gamma = rand((1, 3, 1, 1), 18, 0.5, 1.5)
        beta = rand((1, 3, 1, 1), 19)
        p.gamma.data[:] = gamma
        p.beta.data[:] = beta
        out = batch_norm(Tensor(x), p, "train")
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)  # biased
        expected = gamma * (x - mean) / np.sqrt(var + p.eps) + beta
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_running_stats_momentum_update(self):
        x = rand((2, 2, 4, 4), 20)
        p = make_batch_norm(2, momentum=0.9)
        r_mean0 = p.running_mean.copy()
        r_var0 = p.running_var.copy()
        batch_norm(Tensor(x), p, "train")
        bm = x.mean(axis=(0, 2, 3))
        bv = x.var(axis=(0, 2, 3))
        np.testing.assert_allclose(p.running_mean, 0.9 * r_mean0 + 0.1 * bm,
                                   rtol=1e-12)
        np.testing.assert_allclose(p.running_var, 0.9 * r_var0 + 0.1 * bv,
                                   rtol=1e-12)

    def test_eval_is_affine_in_running_stats(self):
        x = rand((2, 2, 3, 3), 21)
        p = make_batch_norm(2)
        p.running_mean[:] = rand((2,), 22)
        p.running_var[:] = rand((2,), 23, 0.5, 2.0)
        out = batch_norm(Tensor(x), p, "eval")
        rm = p.running_mean.reshape(1, 2, 1, 1)
        rv = p.running_var.reshape(1, 2, 1, 1)
        expected = (x - rm) / np.sqrt(rv + p.eps)
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)
        # eval mode must not touch the buffers
        before = p.running_mean.copy()
        batch_norm(Tensor(x), p, "eval")
        np.testing.assert_array_equal(p.running_mean, before)

    def test_rejects_unknown_mode(self):
        p = make_batch_norm(1)
        with pytest.raises(ValueError, match="mode"):
            batch_norm(Tensor(rand((1, 1, 2, 2), 24)), p, "frozen")

    def weighted(self, seed, shape):
        w = rand(shape, seed, 0.5, 1.5)
        return lambda t: tmean(mul(t, Tensor(np.broadcast_to(w, t.shape).copy())))

    def test_gradients_train_mode(self):
        x = Tensor(rand((3, 2, 4, 4), 25))
        probe_weight = rand((3, 2, 4, 4), 26, 0.5, 1.5)

        def through_input(t):
            p = make_batch_norm(2)
            out = batch_norm(t, p, "train")
            return tmean(mul(out, Tensor(probe_weight)))

        assert grad_check(through_input, x) < 1e-6

    def test_gradients_gamma_beta(self):
        x = rand((2, 2, 3, 3), 27)
        probe_weight = rand((2, 2, 3, 3), 28, 0.5, 1.5)

        def through(attr):
            def f(t):
                p = make_batch_norm(2)
                setattr(p, attr, t)
                out = batch_norm(Tensor(x), p, "train")
                return tmean(mul(out, Tensor(probe_weight)))
            return f

        g = Tensor(rand((1, 2, 1, 1), 29, 0.5, 1.5))
        b = Tensor(rand((1, 2, 1, 1), 30))
        assert grad_check(through("gamma"), g) < 1e-6
        assert grad_check(through("beta"), b) < 1e-6

    def test_gradients_eval_mode(self):
        x = Tensor(rand((2, 2, 3, 3), 31))
        probe_weight = rand((2, 2, 3, 3), 32, 0.5, 1.5)

        def f(t):
            p = make_batch_norm(2)
            p.running_mean[:] = 0.2
            p.running_var[:] = 1.3
            out = batch_norm(t, p, "eval")
            return tmean(mul(out, Tensor(probe_weight)))

        assert grad_check(f, x) < 1e-6


class TestHeInit:
    def test_deterministic_and_scaled(self):
        a = he_init((64, 32, 3, 3), fan_in=32 * 9, rng_seed=5)
        b = he_init((64, 32, 3, 3), fan_in=32 * 9, rng_seed=5)
        np.testing.assert_array_equal(a.data, b.data)
        std = a.data.std()
        expected = np.sqrt(2.0 / (32 * 9))
        assert abs(std - expected) / expected < 0.05
        assert abs(a.data.mean()) < 0.005
