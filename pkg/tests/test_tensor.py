"""Autodiff core: op values against numpy, gradient rules against
central differences, and the graph-replay contract (each op visited
once, fan-out gradients accumulated additively)."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lapir.tensor import (Tensor, add, add_scalar, backward, concat_channels,
                          crop_spatial, grad_check, make_op, mul, no_grad,
                          pad_replicate, relu, scalar, scale, sigmoid, sub,
                          tensor, tmean, tsum)


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


class TestConstruction:
    def test_rejects_non_4d(self):
        with pytest.raises(ValueError, match="4-D"):
            Tensor(np.zeros((3, 3)))

    def test_tensor_factory_pads_leading_axes(self):
        assert tensor(1.5).shape == (1, 1, 1, 1)
        assert tensor(np.zeros((5, 7))).shape == (1, 1, 5, 7)
        assert tensor(np.zeros((2, 5, 7))).shape == (1, 2, 5, 7)
        with pytest.raises(ValueError, match="4 dimensions"):
            tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_scalar_and_item(self):
        s = scalar(2.5)
        assert s.shape == (1, 1, 1, 1)
        assert s.item() == 2.5
        with pytest.raises(ValueError, match="scalar"):
            tensor(np.zeros((2, 2))).item()

    def test_detach_breaks_graph(self):
        x = Tensor(rand((1, 1, 2, 2)), requires_grad=True)
        y = scale(x, 2.0)
        d = y.detach()
        assert not d.requires_grad
        assert not tsum(d).requires_grad

    def test_assert_finite(self):
        t = tensor(np.array([[1.0, np.nan]]))
        with pytest.raises(FloatingPointError, match="probe"):
            t.assert_finite("probe")


class TestForwardValues:
    def test_binary_ops_match_numpy(self):
        a, b = rand((2, 3, 4, 5), 1), rand((2, 3, 4, 5), 2)
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_array_equal(add(ta, tb).data, a + b)
        np.testing.assert_array_equal(sub(ta, tb).data, a - b)
        np.testing.assert_array_equal(mul(ta, tb).data, a * b)

    def test_binary_ops_reject_shape_mismatch(self):
        ta, tb = tensor(np.zeros((2, 2))), tensor(np.zeros((2, 3)))
        for op in (add, sub, mul):
            with pytest.raises(ValueError, match="shape mismatch"):
                op(ta, tb)

    def test_python_scalar_operands(self):
        a = rand((1, 1, 3, 3), 3)
        t = Tensor(a)
        np.testing.assert_array_equal((t + 2.0).data, a + 2.0)
        np.testing.assert_array_equal((t - 0.5).data, a - 0.5)
        np.testing.assert_array_equal((t * 3.0).data, a * 3.0)
        np.testing.assert_array_equal((-t).data, -a)

    def test_relu_and_reductions(self):
        a = rand((1, 2, 3, 3), 4)
        np.testing.assert_array_equal(relu(Tensor(a)).data, np.maximum(a, 0.0))
        assert tsum(Tensor(a)).item() == pytest.approx(a.sum(), rel=1e-14)
        assert tmean(Tensor(a)).item() == pytest.approx(a.mean(), rel=1e-14)

    def test_sigmoid_extremes_stable(self):
        t = tensor(np.array([-1000.0, -10.0, 0.0, 10.0, 1000.0]))
        s = sigmoid(t).data
        assert np.all(np.isfinite(s))
        assert np.all((s >= 0.0) & (s <= 1.0))
        assert s.ravel()[2] == 0.5

    def test_empty_reductions_rejected(self):
        empty = Tensor(np.zeros((1, 0, 2, 2)))
        with pytest.raises(ValueError, match="empty"):
            tsum(empty)
        with pytest.raises(ValueError, match="empty"):
            tmean(empty)

    def test_crop_matches_slice(self):
        a = rand((2, 3, 6, 7), 5)
        out = crop_spatial(Tensor(a), 1, 2, 4, 3)
        np.testing.assert_array_equal(out.data, a[:, :, 1:5, 2:5])
        with pytest.raises(ValueError, match="outside"):
            crop_spatial(Tensor(a), 4, 0, 4, 3)

    def test_pad_replicate_matches_numpy_edge(self):
        a = rand((1, 2, 3, 4), 6)
        out = pad_replicate(Tensor(a), 2)
        np.testing.assert_array_equal(
            out.data, np.pad(a, ((0, 0), (0, 0), (2, 2), (2, 2)), mode="edge"))
        with pytest.raises(ValueError, match="non-negative"):
            pad_replicate(Tensor(a), -1)

    def test_concat_channels(self):
        a, b = rand((2, 1, 3, 3), 7), rand((2, 2, 3, 3), 8)
        out = concat_channels([Tensor(a), Tensor(b)])
        np.testing.assert_array_equal(out.data, np.concatenate([a, b], axis=1))
        with pytest.raises(ValueError, match="incompatible"):
            concat_channels([Tensor(a), Tensor(rand((2, 1, 4, 3), 9))])
        with pytest.raises(ValueError, match="zero"):
            concat_channels([])


class TestBackwardContract:
    def test_fanout_accumulates_additively(self):
        x = Tensor(rand((1, 1, 2, 2), 10), requires_grad=True)
        y = mul(x, x)
        z = tsum(add(y, y))  # z = 2*sum(x^2), dz/dx = 4x
        backward(z)
        np.testing.assert_allclose(x.grad, 4.0 * x.data, rtol=1e-12)

    def test_each_op_backward_called_once(self):
        x = Tensor(rand((1, 1, 2, 2), 11), requires_grad=True)
        calls = {"n": 0}

        def counting(g):
            calls["n"] += 1
            return (g * 2.0,)

        mid = make_op(x.data * 2.0, (x,), counting)
        out = tsum(add(mid, mid))  # mid feeds the sum twice
        backward(out)
        assert calls["n"] == 1
        np.testing.assert_allclose(x.grad, np.full_like(x.data, 4.0))

    def test_grads_accumulate_until_cleared(self):
        x = Tensor(rand((1, 1, 2, 2), 12), requires_grad=True)
        out = tsum(x)
        backward(out)
        first = x.grad.copy()
        # second sweep without clearing: the root seeds another unit of
        # gradient on top of its retained one, so x gains 2x more
        backward(out)
        np.testing.assert_array_equal(x.grad, 3.0 * first)
        x.zero_grad()
        out.zero_grad()
        assert x.grad is None
        backward(out)
        np.testing.assert_array_equal(x.grad, first)

    def test_no_grad_suppresses_recording(self):
        x = Tensor(rand((1, 1, 2, 2), 13), requires_grad=True)
        with no_grad():
            y = tsum(mul(x, x))
        assert not y.requires_grad
        with pytest.raises(ValueError, match="recorded"):
            backward(y)

    def test_backward_requires_scalar_root(self):
        x = Tensor(rand((1, 1, 2, 2), 14), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(add(x, x))

    def test_relu_subgradient_at_zero_is_zero(self):
        x = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        backward(tsum(relu(x)))
        np.testing.assert_array_equal(x.grad, np.zeros_like(x.data))


class TestGradientsAgainstFiniteDifferences:
    def test_elementwise_chain(self):
        x = Tensor(rand((1, 2, 3, 3), 20, 0.1, 0.9))
        assert grad_check(lambda t: tmean(sigmoid(mul(t, t))), x) < 1e-6

    def test_sub_scale_add_scalar(self):
        x = Tensor(rand((1, 1, 4, 4), 21))
        ref = Tensor(rand((1, 1, 4, 4), 22))
        f = lambda t: tmean(mul(sub(t, ref), scale(add_scalar(t, 0.3), 0.7)))
        assert grad_check(f, x) < 1e-6

    def test_crop_embeds_gradient(self):
        x = Tensor(rand((1, 1, 5, 5), 23))
        assert grad_check(lambda t: tsum(crop_spatial(t, 1, 1, 3, 2)), x) < 1e-6

    def test_pad_replicate_folds_copies(self):
        x = Tensor(rand((1, 1, 3, 4), 24))
        assert grad_check(lambda t: tmean(mul(pad_replicate(t, 2),
                                              pad_replicate(t, 2))), x) < 1e-6

    def test_pad_replicate_corner_counts(self):
        # 2x2 input, pad 1: every source pixel feeds a 2x2 output block
        x = Tensor(rand((1, 1, 2, 2), 25), requires_grad=True)
        backward(tsum(pad_replicate(x, 1)))
        np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 4.0))

    def test_concat_split(self):
        x = Tensor(rand((1, 3, 2, 2), 26))
        w = Tensor(rand((1, 3, 2, 2), 27))

        def f(t):
            parts = [crop_spatial(t, 0, 0, 2, 2)]  # keep t in the graph twice
            return tmean(mul(concat_channels([t, parts[0]]),
                             concat_channels([w, w])))

        assert grad_check(f, x) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_sigmoid_complement_identity(seed):
    a = rand((1, 1, 3, 3), seed, -30, 30)
    s1 = sigmoid(Tensor(a)).data
    s2 = sigmoid(Tensor(-a)).data
    np.testing.assert_allclose(s1 + s2, 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_relu_idempotent(seed):
    a = rand((2, 1, 4, 4), seed)
    once = relu(Tensor(a)).data
    np.testing.assert_array_equal(relu(Tensor(once)).data, once)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_mul_commutes_and_matches_numpy(seed):
    a, b = rand((1, 2, 3, 3), seed), rand((1, 2, 3, 3), seed + 1)
    ab = mul(Tensor(a), Tensor(b)).data
    ba = mul(Tensor(b), Tensor(a)).data
    np.testing.assert_array_equal(ab, a * b)
    np.testing.assert_array_equal(ab, ba)
