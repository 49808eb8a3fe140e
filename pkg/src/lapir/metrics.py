"""Fidelity metrics and the colour conversions of the evaluation
protocol.

Metrics run on the luminance channel of the studio-swing YCbCr colour
space (Y spans [16/255, 235/255] for RGB in [0, 1]), with an n-pixel
border shaved off first. PSNR of identical images is reported as
positive infinity. SSIM uses an 11x11 Gaussian window (sigma 1.5),
stabilizers K1 = 0.01 and K2 = 0.03 on a unit dynamic range, plain
(uncorrected) moments, and averages the map over the valid region only.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

# studio-swing RGB->YCbCr for inputs in [0, 1]: ycbcr = (offset + M @ rgb)/255
_M = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
])
_OFFSET = np.array([16.0, 128.0, 128.0])
_M_INV = np.linalg.inv(_M)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_unit_range(img: np.ndarray, what: str) -> np.ndarray:
    if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
        warnings.warn(f"{what} has values outside [0, 1] "
                      f"({img.min():.4g}..{img.max():.4g}); clamping", stacklevel=3)
        img = np.clip(img, 0.0, 1.0)
    return img


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) RGB in [0, 1] -> (H, W, 3) YCbCr in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {rgb.shape}")
    rgb = _check_unit_range(rgb, "rgb input")
    return (rgb @ _M.T + _OFFSET) / 255.0


def ycbcr_to_rgb(ycbcr: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Inverse of `rgb_to_ycbcr`; output clamped to [0, 1] by default."""
    ycbcr = np.asarray(ycbcr, dtype=np.float64)
    if ycbcr.ndim != 3 or ycbcr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {ycbcr.shape}")
    rgb = (ycbcr * 255.0 - _OFFSET) @ _M_INV.T
    return np.clip(rgb, 0.0, 1.0) if clamp else rgb


def luminance(img: np.ndarray) -> np.ndarray:
    """Y plane of an RGB image, or the image itself when already 2-D."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return rgb_to_ycbcr(img)[:, :, 0]


def modcrop(img: np.ndarray, n: int) -> np.ndarray:
    """Trim bottom/right so both spatial sides are multiples of n."""
    if n < 1:
        raise ValueError("modulus must be >= 1")
    h, w = img.shape[:2]
    h -= h % n
    w -= w % n
    if h == 0 or w == 0:
        raise ValueError(f"image of shape {img.shape} is smaller than {n} per side")
    return img[:h, :w]


def crop_border(img: np.ndarray, n: int) -> np.ndarray:
    """Remove n pixels from every side; n = 0 is the identity."""
    if n < 0:
        raise ValueError("border must be non-negative")
    if n == 0:
        return img
    h, w = img.shape[:2]
    if h <= 2 * n or w <= 2 * n:
        raise ValueError(f"image of shape {img.shape} is too small to shave {n} per side")
    return img[n:h - n, n:w - n]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = np.mean((a - b) ** 2)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def _gaussian_window(side: int, sigma: float) -> np.ndarray:
    half = (side - 1) / 2.0
    x = np.arange(side) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _windowed_mean(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable valid-mode Gaussian filtering
    side = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, side, axis=0)
    tmp = rows @ g
    cols = np.lib.stride_tricks.sliding_window_view(tmp, side, axis=1)
    return cols @ g


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity over the valid (fully-windowed) region."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"expected 2-D planes, got shape {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image of shape {a.shape} is smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _windowed_mean(a, g)
    mu_b = _windowed_mean(b, g)
    var_a = _windowed_mean(a * a, g) - mu_a * mu_a
    var_b = _windowed_mean(b * b, g) - mu_b * mu_b
    cov = _windowed_mean(a * b, g) - mu_a * mu_b
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
