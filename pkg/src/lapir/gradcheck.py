"""Gradient verification: analytic backward passes against central
finite differences.

Layer-level checks must agree to a relative error below 1e-4 and the
end-to-end check (composite loss through a tiny pyramid) below 1e-3.
Inputs are drawn away from the ReLU kink so the finite-difference
reference is valid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .layers import (batch_norm, conv2d, make_batch_norm, make_conv,
                     make_transposed_conv, transposed_conv, zero_insert)
from .network import (NetworkConfig, block_forward, build_network,
                      forward_train, level_resolutions)
from .rank_loss import (LossWeights, RankParams, composite_loss, lrt_soft,
                        mse, pyramid_loss)
from .resample import bicubic_resize
from .tensor import Tensor, grad_check, mul, relu, sigmoid, tmean

LAYER_TOL = 1e-4
END_TO_END_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def _rand(rng, *shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _weigher(rng, shape):
    """Project onto a fixed random direction before averaging; a plain
    mean is blind to directions it annihilates (e.g. any batch-normed
    output has an exactly constant mean)."""
    r = Tensor(rng.uniform(0.5, 1.5, size=shape))
    return lambda t: tmean(mul(t, r))


def _layer_checks(seed: int):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 2, 3, 6, 5), requires_grad=True)
    conv = make_conv(3, 4, 3, seed)
    yield "conv2d/input", lambda: grad_check(lambda t: tmean(conv2d(t, conv)), x)
    yield "conv2d/weight", lambda: grad_check(
        lambda w: tmean(conv2d(x, type(conv)(w, conv.bias, conv.padding))), conv.weight)
    yield "conv2d/bias", lambda: grad_check(
        lambda b: tmean(conv2d(x, type(conv)(conv.weight, b, conv.padding))), conv.bias)

    xi = Tensor(_rand(rng, 1, 2, 5, 4), requires_grad=True)
    yield "zero_insert/f=3/2", lambda: grad_check(
        lambda t: tmean(zero_insert(t, Fraction(3, 2))), xi)

    tc = make_transposed_conv(2, 3, 3, 2, seed + 1)
    yield "transposed_conv/input", lambda: grad_check(
        lambda t: tmean(transposed_conv(t, tc)), xi)
    yield "transposed_conv/weight", lambda: grad_check(
        lambda w: tmean(transposed_conv(xi, type(tc)(w, tc.bias, tc.stride, tc.padding))), tc.weight)

    xb = Tensor(_rand(rng, 3, 2, 4, 4), requires_grad=True)
    bn = make_batch_norm(2)
    bn.gamma.data = 1.0 + 0.1 * _rand(rng, 1, 2, 1, 1)
    bn.beta.data = 0.1 * _rand(rng, 1, 2, 1, 1)
    wb = _weigher(rng, (3, 2, 4, 4))
    yield "batch_norm/input", lambda: grad_check(
        lambda t: wb(batch_norm(t, bn, "train")), xb)
    yield "batch_norm/gamma", lambda: grad_check(
        lambda g: wb(batch_norm(xb, type(bn)(g, bn.beta, bn.running_mean,
                                             bn.running_var), "train")), bn.gamma)
    yield "batch_norm/beta", lambda: grad_check(
        lambda b: wb(batch_norm(xb, type(bn)(bn.gamma, b, bn.running_mean,
                                             bn.running_var), "train")), bn.beta)
    yield "batch_norm/input/eval", lambda: grad_check(
        lambda t: wb(batch_norm(t, bn, "eval")), xb)

    # keep activations away from their kinks/saturation
    xa = Tensor(rng.uniform(0.2, 1.0, size=(1, 2, 4, 4)) * np.sign(_rand(rng, 1, 2, 4, 4)),
                requires_grad=True)
    yield "relu", lambda: grad_check(lambda t: tmean(relu(t)), xa)
    yield "sigmoid", lambda: grad_check(lambda t: tmean(sigmoid(t)), xa)

    blk = build_network(NetworkConfig(scale=2, levels=1, blocks_per_level=1,
                                      channels=8, input_patch=8),
                        seed + 3).levels[0].blocks[0]
    xr = Tensor(_rand(rng, 2, 8, 5, 5), requires_grad=True)
    wr = _weigher(rng, (2, 8, 5, 5))
    yield "inception_block/input", lambda: grad_check(
        lambda t: wr(block_forward(t, blk, "train")), xr)
    yield "inception_block/proj.weight", lambda: grad_check(
        lambda w: wr(block_forward(
            xr, replace(blk, proj=type(blk.proj)(w, blk.proj.bias,
                                                 blk.proj.padding)),
            "train")), blk.proj.weight)

    rank = RankParams(window=3, delta=4.0 / 255.0, tau=0.05)
    img = Tensor(rng.uniform(0.0, 1.0, size=(1, 1, 6, 6)), requires_grad=True)
    yield "lrt_soft", lambda: grad_check(lambda t: tmean(lrt_soft(t, rank)), img)

    label = Tensor(rng.uniform(0.0, 1.0, size=(1, 1, 6, 6)))
    yield "mse", lambda: grad_check(lambda t: mse(t, label), img)
    yield "composite_loss", lambda: grad_check(
        lambda t: composite_loss(t, label, rank, LossWeights(beta=0.05)), img)


def _end_to_end_checks(seed: int):
    cfg = NetworkConfig(scale=2, levels=2, blocks_per_level=1, channels=8,
                        input_patch=8, tau=0.05)
    net = build_network(cfg, seed)
    rng = np.random.default_rng(seed + 7)
    lr = rng.uniform(0.0, 1.0, size=(2, 1, 8, 8))
    rank = RankParams(cfg.window, cfg.delta, cfg.tau)
    weights = LossWeights(cfg.beta, cfg.level_weights)

    res = level_resolutions(8, cfg.scale, cfg.levels)
    skips, labels = [], []
    for r in res[1:]:
        planes = np.stack([bicubic_resize(p[0], r, r, antialias=False) for p in lr])
        skips.append(Tensor(planes[:, None]))
        labels.append(Tensor(np.clip(planes[:, None] + 0.05 * rng.standard_normal(
            (2, 1, r, r)), 0.0, 1.0)))

    def loss_through(holder, attr):
        # substitute the probe for one parameter, run the full pyramid
        def f(probe: Tensor) -> Tensor:
            original = getattr(holder, attr)
            setattr(holder, attr, probe)
            try:
                preds = forward_train(Tensor(lr), net, skips)
                return pyramid_loss(preds, labels, rank, weights)
            finally:
                setattr(holder, attr, original)
        return f

    probes = [
        ("stem.weight", net.stem, "weight"),
        ("level1.up.weight", net.levels[0].up, "weight"),
        ("level1.block1.proj.weight", net.levels[0].blocks[0].proj, "weight"),
        ("level1.block1.bn_in.gamma", net.levels[0].blocks[0].bn_in, "gamma"),
        ("level2.recon.weight", net.levels[1].recon, "weight"),
        ("level2.recon.bias", net.levels[1].recon, "bias"),
        ("input", None, None),
    ]
    # The full pyramid stacks many relu kinks; a 1e-5 half-width interval
    # can straddle one and corrupt the difference quotient. 3e-6 stays
    # inside the piecewise-smooth region while f64 roundoff is still ~1e-7.
    fd_eps = 3e-6
    for name, holder, attr in probes:
        if holder is None:
            def f_input(probe: Tensor) -> Tensor:
                preds = forward_train(probe, net, skips)
                return pyramid_loss(preds, labels, rank, weights)
            yield f"end_to_end/{name}", lambda f=f_input: grad_check(f, Tensor(lr), eps=fd_eps)
        else:
            target = getattr(holder, attr)
            yield (f"end_to_end/{name}",
                   lambda f=loss_through(holder, attr), t=target: grad_check(f, t, eps=fd_eps))


def run_suite(seed: int = 0) -> list[CheckResult]:
    """All gradient checks, layer-level then end-to-end."""
    results = []
    for name, run in _layer_checks(seed):
        results.append(CheckResult(name, float(run()), LAYER_TOL))
    for name, run in _end_to_end_checks(seed):
        results.append(CheckResult(name, float(run()), END_TO_END_TOL))
    return results
