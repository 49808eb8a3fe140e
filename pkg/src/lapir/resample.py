"""Separable bicubic resampling with the Keys a=-0.5 kernel.

Downscaling widens the kernel support by the inverse scale (antialias),
upscaling never does. Source coordinates follow the half-pixel-center
mapping u = (i + 0.5)/scale - 0.5, out-of-range taps clamp to the edge
sample, and each output row of weights is normalized to sum to 1 so
constant images are preserved exactly.
"""

from __future__ import annotations

import numpy as np

_SUPPORT = 4.0  # total width of the cubic kernel


def cubic_kernel(x: np.ndarray) -> np.ndarray:
    """Keys piecewise cubic with a = -0.5 (zero outside |x| >= 2)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    near = 1.5 * x3 - 2.5 * x2 + 1.0
    far = -0.5 * x3 + 2.5 * x2 - 4.0 * x + 2.0
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def resize_weights(in_len: int, out_len: int, antialias: bool) -> np.ndarray:
    """Dense (out_len, in_len) row-stochastic resampling matrix for one axis."""
    if in_len < 1 or out_len < 1:
        raise ValueError("axis lengths must be positive")
    scale = out_len / in_len
    if antialias and scale < 1.0:
        kscale = scale
        support = _SUPPORT / scale
    else:
        kscale = 1.0
        support = _SUPPORT
    u = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(u - support / 2.0).astype(np.int64)
    taps = int(np.ceil(support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = cubic_kernel((u[:, None] - idx) * kscale) * kscale
    w /= w.sum(axis=1, keepdims=True)
    clamped = np.clip(idx, 0, in_len - 1)
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), clamped.ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool) -> np.ndarray:
    """Resize a (H, W) or (H, W, C) float array to (out_h, out_w).

    Rows and columns are resampled independently; the two passes commute
    to within floating-point roundoff.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError(f"expected a 2-D or 3-D image, got shape {img.shape}")
    h, w = img.shape[:2]
    wh = resize_weights(h, out_h, antialias)
    ww = resize_weights(w, out_w, antialias)
    if img.ndim == 2:
        return wh @ img @ ww.T
    out = np.empty((out_h, out_w, img.shape[2]))
    for c in range(img.shape[2]):
        out[:, :, c] = wh @ img[:, :, c] @ ww.T
    return out
