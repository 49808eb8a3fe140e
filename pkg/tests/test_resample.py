"""Bicubic resizing against a from-scratch evaluation of the kernel-sum
definition, plus the algebraic properties the resizer must satisfy."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lapir.resample import bicubic_resize, cubic_kernel, resize_weights


def keys_reference(x):
    """Piecewise cubic with a = -1/2, written independently."""
    ax = abs(x)
    if ax <= 1:
        return 1.5 * ax ** 3 - 2.5 * ax ** 2 + 1.0
    if ax < 2:
        return -0.5 * ax ** 3 + 2.5 * ax ** 2 - 4.0 * ax + 2.0
    return 0.0


def weights_reference(in_len, out_len, antialias):
    """Direct construction: evaluate the kernel at every candidate source
    sample, normalize, then fold out-of-range taps onto the edges."""
    scale = out_len / in_len
    shrink = antialias and scale < 1.0
    kw = scale if shrink else 1.0
    mat = np.zeros((out_len, in_len))
    for i in range(out_len):
        u = (i + 0.5) / scale - 0.5
        lo = int(np.floor(u)) - int(np.ceil(2.0 / kw)) - 2
        hi = int(np.ceil(u)) + int(np.ceil(2.0 / kw)) + 2
        taps = {m: kw * keys_reference((u - m) * kw) for m in range(lo, hi + 1)}
        total = sum(taps.values())
        for m, w in taps.items():
            mat[i, min(max(m, 0), in_len - 1)] += w / total
    return mat


class TestKernel:
    def test_frozen_values(self):
        pts = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 2.5])
        expected = np.array([1.0, 0.5625, 0.0, -0.0625, 0.0, 0.0])
        np.testing.assert_allclose(cubic_kernel(pts), expected, atol=1e-15)
        np.testing.assert_allclose(cubic_kernel(-pts), expected, atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-3.0, 3.0, allow_nan=False))
    def test_matches_piecewise_reference(self, x):
        got = cubic_kernel(np.array([x]))[0]
        assert got == pytest.approx(keys_reference(x), abs=1e-12)


class TestWeights:
    def test_rows_sum_to_one(self):
        for in_len, out_len in ((7, 13), (13, 7), (5, 5), (32, 9), (9, 32)):
            for antialias in (False, True):
                w = resize_weights(in_len, out_len, antialias)
                np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_identity_at_same_length(self):
        for n in (1, 4, 9):
            np.testing.assert_array_equal(resize_weights(n, n, False), np.eye(n))
            np.testing.assert_array_equal(resize_weights(n, n, True), np.eye(n))

    @pytest.mark.parametrize("in_len,out_len,antialias", [
        (7, 10, False),   # upscale
        (10, 7, True),    # antialiased downscale: kernel stretched
        (10, 7, False),   # plain downscale
        (5, 15, False),
        (16, 6, True),
    ])
    def test_matches_direct_construction(self, in_len, out_len, antialias):
        got = resize_weights(in_len, out_len, antialias)
        want = weights_reference(in_len, out_len, antialias)
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestResize:
    def test_identity_exact(self):
        img = np.random.default_rng(0).random((9, 7))
        np.testing.assert_array_equal(bicubic_resize(img, 9, 7, False), img)
        np.testing.assert_array_equal(bicubic_resize(img, 9, 7, True), img)

    def test_constant_preserved(self):
        img = np.full((11, 8), 0.37)
        for out_h, out_w in ((22, 16), (5, 4), (13, 19)):
            for antialias in (False, True):
                out = bicubic_resize(img, out_h, out_w, antialias)
                np.testing.assert_allclose(out, 0.37, atol=1e-12)

    def test_separable_application(self):
        img = np.random.default_rng(1).random((8, 6))
        wh = resize_weights(8, 12, False)
        ww = resize_weights(6, 9, False)
        np.testing.assert_allclose(bicubic_resize(img, 12, 9, False),
                                   wh @ img @ ww.T, atol=1e-12)

    def test_axes_independent(self):
        img = np.random.default_rng(2).random((10, 10))
        two_step = bicubic_resize(bicubic_resize(img, 15, 10, False), 15, 14, False)
        joint = bicubic_resize(img, 15, 14, False)
        np.testing.assert_allclose(two_step, joint, atol=1e-12)

    def test_three_channel_matches_per_plane(self):
        img = np.random.default_rng(3).random((9, 9, 3))
        out = bicubic_resize(img, 14, 6, True)
        assert out.shape == (14, 6, 3)
        for c in range(3):
            np.testing.assert_array_equal(out[:, :, c],
                                          bicubic_resize(img[:, :, c], 14, 6, True))

    def test_rejects_bad_target(self):
        img = np.zeros((4, 4))
        with pytest.raises(ValueError):
            bicubic_resize(img, 0, 4, False)
