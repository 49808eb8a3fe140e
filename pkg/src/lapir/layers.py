"""Neural network layers: convolution, fractional-stride transposed
convolution, batch normalization and He initialization.

The transposed convolution upsamples by inserting rows/columns of zeros on
a non-uniform grid (so the stride can be a non-integer rational such as
3/2) and then running an ordinary same-padded convolution over the
inserted grid. `transposed_conv` is defined compositionally as
`conv2d(zero_insert(x, f))`, which also serves as its own oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .tensor import Tensor, make_op

# cap im2col scratch at ~128 MB of float64 so full-image inference stays bounded
_COL_CHUNK_ELEMS = 1 << 24


@dataclass
class ConvParams:
    """Weights of an ordinary stride-1 convolution.

    weight: (out_ch, in_ch, kH, kW), kernel sides odd.
    bias:   (1, out_ch, 1, 1).
    padding: zero-padding per side; (k-1)//2 gives "same" output.
    """

    weight: Tensor
    bias: Tensor
    padding: int

    def __post_init__(self):
        _, _, kh, kw = self.weight.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel sides must be odd, got {kh}x{kw}")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")


@dataclass
class TransposedConvParams:
    """Weights of the fractional-stride transposed convolution.

    The stride is an exact rational (per spatial axis) and is allowed to
    vary per call: the same kernel upsamples to whatever grid the caller
    derives from its input/output sizes.
    """

    weight: Tensor
    bias: Tensor
    stride: tuple[Fraction, Fraction]
    padding: int

    def __post_init__(self):
        self.stride = (_as_stride(self.stride[0]), _as_stride(self.stride[1]))


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("batch norm epsilon must be positive")
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be non-negative")


def _as_stride(f) -> Fraction:
    frac = Fraction(f)
    if frac < 1:
        raise ValueError(f"fractional stride must be >= 1, got {frac}")
    return frac


def _conv_values(xp: np.ndarray, wmat: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    o = wmat.shape[0]
    out = np.empty((n, o, ho, wo))
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    rows = max(1, _COL_CHUNK_ELEMS // max(1, n * wo * c * kh * kw))
    for r0 in range(0, ho, rows):
        r1 = min(ho, r0 + rows)
        cols = np.ascontiguousarray(view[:, :, r0:r1].transpose(0, 2, 3, 1, 4, 5))
        cols = cols.reshape(n * (r1 - r0) * wo, c * kh * kw)
        blk = cols @ wmat.T
        out[:, :, r0:r1] = blk.reshape(n, r1 - r0, wo, o).transpose(0, 3, 1, 2)
    return out


def _conv_grads(xp, wmat, g, kh, kw, pad, need_x, need_w):
    n, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    dw = np.zeros_like(wmat) if need_w else None
    dxp = np.zeros_like(xp) if need_x else None
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    rows = max(1, _COL_CHUNK_ELEMS // max(1, n * wo * c * kh * kw))
    for r0 in range(0, ho, rows):
        r1 = min(ho, r0 + rows)
        gmat = np.ascontiguousarray(g[:, :, r0:r1].transpose(0, 2, 3, 1))
        gmat = gmat.reshape(n * (r1 - r0) * wo, wmat.shape[0])
        if need_w:
            cols = np.ascontiguousarray(view[:, :, r0:r1].transpose(0, 2, 3, 1, 4, 5))
            cols = cols.reshape(n * (r1 - r0) * wo, c * kh * kw)
            dw += gmat.T @ cols
        if need_x:
            dcols = (gmat @ wmat).reshape(n, r1 - r0, wo, c, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, r0 + i:r1 + i, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if need_x and pad:
        dx = np.ascontiguousarray(dxp[:, :, pad:hp - pad, pad:wp - pad])
    else:
        dx = dxp
    return dx, dw


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Stride-1 2-D convolution with zero padding and full backward rules."""
    o, cin, kh, kw = p.weight.shape
    if cin != x.shape[1]:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, kernel expects {cin}")
    pad = p.padding
    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    wmat = p.weight.data.reshape(o, cin * kh * kw)
    out = _conv_values(xp, wmat, kh, kw) + p.bias.data
    weight, bias = p.weight, p.bias

    def backward_fn(g):
        dx, dw = _conv_grads(xp, wmat, g, kh, kw, pad,
                             x.requires_grad, weight.requires_grad)
        db = g.sum(axis=(0, 2, 3)).reshape(bias.shape) if bias.requires_grad else None
        return (dx, dw.reshape(weight.shape) if dw is not None else None, db)

    return make_op(out, (x, weight, bias), backward_fn)


def insert_positions(m: int, f: Fraction) -> tuple[int, np.ndarray]:
    """Grid length and sample indices for zero insertion along one axis.

    The upsampled grid has length ceil(f*(m-1)) + 1 and input sample i
    lands at round(i*f), ties rounding half up (exact rational
    arithmetic, never a rounded float).
    """
    f = _as_stride(f)
    if m < 1:
        raise ValueError("axis length must be positive")
    length = math.ceil(f * (m - 1)) + 1 if m > 1 else 1
    idx = np.array([math.floor(i * f + Fraction(1, 2)) for i in range(m)], dtype=np.intp)
    return length, idx


def zero_insert(x: Tensor, f) -> Tensor:
    """Scatter samples onto the fractional-stride grid, zeros elsewhere.

    `f` is a rational stride >= 1, or a per-axis (f_h, f_w) pair. Backward
    gathers the gradient at exactly the forward scatter indices.
    """
    fh, fw = f if isinstance(f, tuple) else (f, f)
    n, c, h, w = x.shape
    mh, idx_h = insert_positions(h, fh)
    mw, idx_w = insert_positions(w, fw)
    data = np.zeros((n, c, mh, mw))
    data[:, :, idx_h[:, None], idx_w[None, :]] = x.data

    def backward_fn(g):
        return (np.ascontiguousarray(g[:, :, idx_h[:, None], idx_w[None, :]]),)

    return make_op(data, (x,), backward_fn)


def transposed_conv(x: Tensor, p: TransposedConvParams, stride=None) -> Tensor:
    """Fractional-stride transposed convolution: conv2d over the
    zero-inserted grid. Output side = ceil(f*(m-1)) + 1 + (k-1) - 2*pad."""
    s = p.stride if stride is None else stride
    if not isinstance(s, tuple):
        s = (s, s)
    inserted = zero_insert(x, s)
    return conv2d(inserted, ConvParams(p.weight, p.bias, p.padding))


def batch_norm(x: Tensor, p: BatchNormParams, mode: str) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes by (biased) batch statistics and updates the
    running buffers in place with momentum; eval mode uses the running
    buffers. Epsilon keeps zero-variance channels finite.
    """
    c = x.shape[1]
    if c != p.gamma.shape[1]:
        raise ValueError(f"batch_norm: input has {c} channels, params expect {p.gamma.shape[1]}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batch norm mode {mode!r}")
    gamma, beta = p.gamma, p.beta

    if mode == "eval":
        inv = 1.0 / np.sqrt(p.running_var + p.eps)
        xhat = (x.data - p.running_mean[None, :, None, None]) * inv[None, :, None, None]
        out = gamma.data * xhat + beta.data

        def backward_eval(g):
            dx = g * gamma.data * inv[None, :, None, None] if x.requires_grad else None
            dgamma = (g * xhat).sum(axis=(0, 2, 3)).reshape(gamma.shape) if gamma.requires_grad else None
            dbeta = g.sum(axis=(0, 2, 3)).reshape(beta.shape) if beta.requires_grad else None
            return (dx, dgamma, dbeta)

        return make_op(out, (x, gamma, beta), backward_eval)

    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    p.running_mean *= p.momentum
    p.running_mean += (1.0 - p.momentum) * mu
    p.running_var *= p.momentum
    p.running_var += (1.0 - p.momentum) * var

    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data * xhat + beta.data

    def backward_train(g):
        dgamma = (g * xhat).sum(axis=axes).reshape(gamma.shape) if gamma.requires_grad else None
        dbeta = g.sum(axis=axes).reshape(beta.shape) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            mean_dxhat = dxhat.mean(axis=axes)[None, :, None, None]
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes)[None, :, None, None]
            dx = inv[None, :, None, None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        return (dx, dgamma, dbeta)

    return make_op(out, (x, gamma, beta), backward_train)


def he_init(shape: tuple[int, ...], fan_in: int, rng_seed) -> Tensor:
    """Zero-mean normal samples with std sqrt(2/fan_in), deterministic per seed."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    rng = np.random.default_rng(rng_seed)
    std = math.sqrt(2.0 / fan_in)
    data = rng.normal(0.0, std, size=shape)
    return Tensor(data.reshape((1,) * (4 - data.ndim) + data.shape) if data.ndim < 4 else data,
                  requires_grad=True)


def make_conv(in_ch: int, out_ch: int, k: int, rng_seed) -> ConvParams:
    """He-initialized same-padded conv with zero biases."""
    w = he_init((out_ch, in_ch, k, k), in_ch * k * k, rng_seed)
    b = Tensor(np.zeros((1, out_ch, 1, 1)), requires_grad=True)
    return ConvParams(w, b, padding=(k - 1) // 2)


def make_transposed_conv(in_ch: int, out_ch: int, k: int, stride, rng_seed) -> TransposedConvParams:
    w = he_init((out_ch, in_ch, k, k), in_ch * k * k, rng_seed)
    b = Tensor(np.zeros((1, out_ch, 1, 1)), requires_grad=True)
    s = stride if isinstance(stride, tuple) else (stride, stride)
    return TransposedConvParams(w, b, s, padding=(k - 1) // 2)


def make_batch_norm(channels: int, momentum: float = 0.9, eps: float = 1e-5) -> BatchNormParams:
    return BatchNormParams(
        gamma=Tensor(np.ones((1, channels, 1, 1)), requires_grad=True),
        beta=Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
        momentum=momentum,
        eps=eps,
    )
