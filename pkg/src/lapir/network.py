"""Progressive-upsampling pyramid network with inception-residual blocks.

Each level upsamples the running feature map by a fractional stride,
refines it with pre-activation inception-residual blocks, and emits a
one-channel residual image that is added to a bicubic skip image of the
same size. Intermediate level resolutions follow a geometric ladder
between the input side and scale*side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .layers import (BatchNormParams, ConvParams, TransposedConvParams,
                     batch_norm, conv2d, make_batch_norm, make_conv,
                     make_transposed_conv, transposed_conv)
from .resample import bicubic_resize
from .tensor import Tensor, add, concat_channels, no_grad, relu


@dataclass
class NetworkConfig:
    """Architecture and loss hyperparameters.

    scale: upscaling factor n in {2, 3, 4}.
    levels: pyramid depth L (the top level reaches n * input side).
    blocks_per_level: inception-residual blocks per level.
    channels: feature width, divisible by 4 (branch bottleneck C/4).
    input_patch: training patch side at the lowest resolution.
    beta/delta/tau/window: rank-transform loss parameters.
    level_weights: per-level loss weights k_s; empty means all ones.
    """

    scale: int = 2
    levels: int = 2
    blocks_per_level: int = 3
    channels: int = 64
    input_patch: int = 27
    beta: float = 0.05
    delta: float = 4.0 / 255.0
    tau: float = 0.02
    window: int = 3
    level_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.blocks_per_level < 1:
            raise ValueError("blocks_per_level must be >= 1")
        if self.channels < 4 or self.channels % 4:
            raise ValueError(f"channels must be a positive multiple of 4, got {self.channels}")
        if self.input_patch < 8:
            raise ValueError("input_patch must be >= 8")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be an odd integer >= 3")
        self.level_weights = tuple(float(k) for k in self.level_weights)
        if self.level_weights and len(self.level_weights) != self.levels:
            raise ValueError(
                f"level_weights has {len(self.level_weights)} entries for {self.levels} levels")
        # fail fast if the resolution ladder degenerates at the training size
        level_resolutions(self.input_patch, self.scale, self.levels)

    def weights_per_level(self) -> tuple[float, ...]:
        return self.level_weights or (1.0,) * self.levels


def level_resolutions(side: int, scale: int, levels: int) -> list[int]:
    """Sides [r_0 .. r_L]: r_0 = side, r_L = scale*side, interior levels
    at round(side * scale**(s/L)) with ties rounding half up. The ladder
    must be strictly increasing."""
    if side < 2:
        raise ValueError(f"input side must be >= 2, got {side}")
    res = [side]
    for s in range(1, levels):
        res.append(math.floor(side * scale ** (s / levels) + 0.5))
    res.append(scale * side)
    for a, b in zip(res, res[1:]):
        if b <= a:
            raise ValueError(f"resolution ladder {res} is not strictly increasing")
    return res


def level_strides(resolutions: list[int]) -> list[Fraction]:
    """Exact fractional stride per level: f_s = (r_s - 1)/(r_{s-1} - 1)."""
    return [Fraction(b - 1, a - 1) for a, b in zip(resolutions, resolutions[1:])]


@dataclass
class InceptionResidualBlock:
    """Full pre-activation residual block with three parallel branches
    (1x1; 1x1-3x3; 1x1-3x3-3x3), each bottlenecked to channels/4, fused
    by a 1x1 projection back to the block width."""

    bn_in: BatchNormParams
    a1: ConvParams
    b1: ConvParams
    bn_b: BatchNormParams
    b2: ConvParams
    c1: ConvParams
    bn_c2: BatchNormParams
    c2: ConvParams
    bn_c3: BatchNormParams
    c3: ConvParams
    proj: ConvParams


@dataclass
class PyramidLevel:
    up: TransposedConvParams
    blocks: list[InceptionResidualBlock]
    recon: ConvParams


class ParamStore:
    """Ordered registry of trainable tensors and running-stat buffers.

    Names are hierarchical and unique; buffers alias the arrays held by
    the layer parameter objects, so in-place edits stay visible to both.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add_param(self, name: str, t: Tensor) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = t

    def add_buffer(self, name: str, arr: np.ndarray) -> None:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        self.buffers[name] = arr

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def set_trainable(self, names, flag: bool) -> None:
        for name in names:
            self.params[name].requires_grad = flag

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.params.items() if t.requires_grad}

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def quantize_f32(self) -> None:
        """Round every parameter and buffer to float32 values (kept in
        float64 storage) so serialized state reloads bit-identically."""
        for t in self.params.values():
            t.data = t.data.astype(np.float32).astype(np.float64)
        for b in self.buffers.values():
            b[...] = b.astype(np.float32).astype(np.float64)


@dataclass
class Network:
    cfg: NetworkConfig
    stem: ConvParams
    levels: list[PyramidLevel]
    store: ParamStore
    level_param_names: list[list[str]] = field(default_factory=list)

    def trainable_names_for_level(self, s: int) -> list[str]:
        """Stage-1 trainable set for 1-based level s (the stem trains
        with the first level)."""
        return list(self.level_param_names[s - 1])


def is_transposed_param(name: str) -> bool:
    return ".up." in name


def _register_conv(store: ParamStore, name: str, p: ConvParams | TransposedConvParams) -> list[str]:
    store.add_param(f"{name}.weight", p.weight)
    store.add_param(f"{name}.bias", p.bias)
    return [f"{name}.weight", f"{name}.bias"]


def _register_bn(store: ParamStore, name: str, p: BatchNormParams) -> list[str]:
    store.add_param(f"{name}.gamma", p.gamma)
    store.add_param(f"{name}.beta", p.beta)
    store.add_buffer(f"{name}.running_mean", p.running_mean)
    store.add_buffer(f"{name}.running_var", p.running_var)
    return [f"{name}.gamma", f"{name}.beta"]


def build_network(cfg: NetworkConfig, seed: int) -> Network:
    """Deterministically construct the network: He-initialized conv
    weights (one child seed per conv, fixed order), zero biases, identity
    batch-norm parameters."""
    res = level_resolutions(cfg.input_patch, cfg.scale, cfg.levels)
    strides = level_strides(res)
    n_convs = 1 + cfg.levels * (2 + 7 * cfg.blocks_per_level)
    seeds = iter(np.random.SeedSequence(seed).spawn(n_convs))
    store = ParamStore()
    c = cfg.channels
    q = c // 4

    stem = make_conv(1, c, 3, next(seeds))
    names = _register_conv(store, "stem", stem)
    level_names: list[list[str]] = [list(names)]  # stem trains with level 1

    levels = []
    for s in range(1, cfg.levels + 1):
        acc: list[str] = level_names[0] if s == 1 else []
        if s > 1:
            level_names.append(acc)
        prefix = f"level{s}"
        up = make_transposed_conv(c, c, 3, strides[s - 1], next(seeds))
        acc += _register_conv(store, f"{prefix}.up", up)
        blocks = []
        for r in range(1, cfg.blocks_per_level + 1):
            bp = f"{prefix}.block{r}"
            blk = InceptionResidualBlock(
                bn_in=make_batch_norm(c),
                a1=make_conv(c, q, 1, next(seeds)),
                b1=make_conv(c, q, 1, next(seeds)),
                bn_b=make_batch_norm(q),
                b2=make_conv(q, q, 3, next(seeds)),
                c1=make_conv(c, q, 1, next(seeds)),
                bn_c2=make_batch_norm(q),
                c2=make_conv(q, q, 3, next(seeds)),
                bn_c3=make_batch_norm(q),
                c3=make_conv(q, q, 3, next(seeds)),
                proj=make_conv(3 * q, c, 1, next(seeds)),
            )
            acc += _register_bn(store, f"{bp}.bn_in", blk.bn_in)
            acc += _register_conv(store, f"{bp}.a1", blk.a1)
            acc += _register_conv(store, f"{bp}.b1", blk.b1)
            acc += _register_bn(store, f"{bp}.bn_b", blk.bn_b)
            acc += _register_conv(store, f"{bp}.b2", blk.b2)
            acc += _register_conv(store, f"{bp}.c1", blk.c1)
            acc += _register_bn(store, f"{bp}.bn_c2", blk.bn_c2)
            acc += _register_conv(store, f"{bp}.c2", blk.c2)
            acc += _register_bn(store, f"{bp}.bn_c3", blk.bn_c3)
            acc += _register_conv(store, f"{bp}.c3", blk.c3)
            acc += _register_conv(store, f"{bp}.proj", blk.proj)
            blocks.append(blk)
        recon = make_conv(c, 1, 3, next(seeds))
        acc += _register_conv(store, f"{prefix}.recon", recon)
        levels.append(PyramidLevel(up=up, blocks=blocks, recon=recon))

    return Network(cfg=cfg, stem=stem, levels=levels, store=store,
                   level_param_names=level_names)


def block_forward(x: Tensor, blk: InceptionResidualBlock, mode: str) -> Tensor:
    t = relu(batch_norm(x, blk.bn_in, mode))
    a = conv2d(t, blk.a1)
    b = conv2d(t, blk.b1)
    b = conv2d(relu(batch_norm(b, blk.bn_b, mode)), blk.b2)
    c = conv2d(t, blk.c1)
    c = conv2d(relu(batch_norm(c, blk.bn_c2, mode)), blk.c2)
    c = conv2d(relu(batch_norm(c, blk.bn_c3, mode)), blk.c3)
    fused = conv2d(concat_channels((a, b, c)), blk.proj)
    return add(fused, x)


def level_forward(feat: Tensor, level: PyramidLevel, mode: str, stride,
                  want_residual: bool = True) -> tuple[Tensor, Tensor | None]:
    f = transposed_conv(feat, level.up, stride)
    for blk in level.blocks:
        f = block_forward(f, blk, mode)
    residual = conv2d(f, level.recon) if want_residual else None
    return f, residual


def _strides_for(shape_hw: tuple[int, int], cfg: NetworkConfig) -> list[tuple[Fraction, Fraction]]:
    res_h = level_resolutions(shape_hw[0], cfg.scale, cfg.levels)
    res_w = level_resolutions(shape_hw[1], cfg.scale, cfg.levels)
    return list(zip(level_strides(res_h), level_strides(res_w)))


def forward_train(lr_batch: Tensor, net: Network, skips, mode: str = "train") -> list[Tensor]:
    """All-level forward on one graph; prediction s = residual s + skip s.

    skips: per-level bicubic upsamplings of the input batch, as Tensors
    whose sizes must match the level resolutions exactly.
    """
    if len(skips) != net.cfg.levels:
        raise ValueError(f"expected {net.cfg.levels} skip images, got {len(skips)}")
    strides = _strides_for(lr_batch.shape[2:], net.cfg)
    f = conv2d(lr_batch, net.stem)
    preds = []
    for s, level in enumerate(net.levels):
        f, residual = level_forward(f, level, mode, strides[s])
        if skips[s].shape != residual.shape:
            raise ValueError(
                f"skip {s + 1} has shape {skips[s].shape}, expected {residual.shape}")
        preds.append(add(residual, skips[s]))
    return preds


def forward_stage1(lr_batch: Tensor, net: Network, target_level: int, skip: Tensor) -> Tensor:
    """Forward to one level only, with all earlier levels frozen: they run
    outside the recorded graph, in eval mode, so backward never touches
    them. Returns the prediction at `target_level` (1-based)."""
    if not 1 <= target_level <= net.cfg.levels:
        raise ValueError(f"target_level must be in 1..{net.cfg.levels}")
    strides = _strides_for(lr_batch.shape[2:], net.cfg)
    if target_level == 1:
        f = conv2d(lr_batch, net.stem)
    else:
        with no_grad():
            f = conv2d(lr_batch, net.stem)
            for t in range(target_level - 1):
                f, _ = level_forward(f, net.levels[t], "eval", strides[t],
                                     want_residual=False)
    f, residual = level_forward(f, net.levels[target_level - 1], "train",
                                strides[target_level - 1])
    if skip.shape != residual.shape:
        raise ValueError(f"skip has shape {skip.shape}, expected {residual.shape}")
    return add(residual, skip)


def forward_infer(y: np.ndarray, net: Network, clamp: bool = True) -> np.ndarray:
    """Super-resolve one luminance plane in [0, 1].

    Level resolutions are recomputed per axis from the actual input size,
    batch norm runs in eval mode, and the output is final residual plus
    the bicubic skip, clamped to [0, 1] unless disabled.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"expected a 2-D luminance plane, got shape {y.shape}")
    h, w = y.shape
    if h < 8 or w < 8:
        raise ValueError(f"input must be at least 8x8, got {h}x{w}")
    cfg = net.cfg
    res_h = level_resolutions(h, cfg.scale, cfg.levels)
    res_w = level_resolutions(w, cfg.scale, cfg.levels)
    strides = list(zip(level_strides(res_h), level_strides(res_w)))
    skip = bicubic_resize(y, res_h[-1], res_w[-1], antialias=False)
    with no_grad():
        f = conv2d(Tensor(y[None, None]), net.stem)
        residual = None
        for s, level in enumerate(net.levels):
            f, residual = level_forward(f, level, "eval", strides[s],
                                        want_residual=(s == cfg.levels - 1))
    out = residual.data[0, 0] + skip
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out
