"""Local rank transform and the composite training loss built on it.

For each pixel, the rank transform counts how many of the w*w
neighbours (the pixel included) the centre does NOT exceed by more than
delta: LRT = N_w - sum_k [centre - neighbour_k > delta]. The hard count
is exact but has zero gradient; the soft variant replaces the step with
a logistic of temperature tau, recovering the hard map as tau -> 0. The
composite loss is pixel MSE plus beta times the MSE between soft rank
maps (normalized by N_w) of prediction and label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, add, add_scalar, crop_spatial, mul, pad_replicate,
                     scale, sigmoid, sub, tmean)


@dataclass
class RankParams:
    window: int = 3
    delta: float = 4.0 / 255.0
    tau: float = 0.02

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be an odd integer >= 3, got {self.window}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def neighbourhood(self) -> int:
        return self.window * self.window


@dataclass
class LossWeights:
    beta: float = 0.05
    level_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        self.level_weights = tuple(float(k) for k in self.level_weights)

    def for_levels(self, levels: int) -> tuple[float, ...]:
        if not self.level_weights:
            return (1.0,) * levels
        if len(self.level_weights) != levels:
            raise ValueError(
                f"{len(self.level_weights)} level weights for {levels} levels")
        return self.level_weights


def _plane_views(img) -> np.ndarray:
    arr = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None, None]
    if arr.ndim == 4 and arr.shape[1] == 1:
        return arr
    raise ValueError(f"expected a single-channel image, got shape {arr.shape}")


def lrt_hard(img, p: RankParams) -> np.ndarray:
    """Exact integer rank map, same spatial dims as the input.

    Accepts a 2-D array or an (N, 1, H, W) array/Tensor; edges replicate.
    """
    planes = _plane_views(img)
    n, _, h, w = planes.shape
    r = p.window // 2
    padded = np.pad(planes, ((0, 0), (0, 0), (r, r), (r, r)), mode="edge")
    exceeds = np.zeros((n, 1, h, w), dtype=np.int64)
    for di in range(p.window):
        for dj in range(p.window):
            neigh = padded[:, :, di:di + h, dj:dj + w]
            exceeds += (planes - neigh) > p.delta
    out = p.neighbourhood - exceeds
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    return out[0, 0] if arr.ndim == 2 else out


def lrt_soft(img: Tensor, p: RankParams) -> Tensor:
    """Differentiable rank map: the hard comparison is relaxed to
    logistic((centre - neighbour - delta)/tau). Built from recorded
    primitives, so gradients flow through both centre and neighbours."""
    if img.shape[1] != 1:
        raise ValueError(f"expected a single-channel image, got shape {img.shape}")
    _, _, h, w = img.shape
    r = p.window // 2
    padded = pad_replicate(img, r)
    acc = None
    for di in range(p.window):
        for dj in range(p.window):
            neigh = crop_spatial(padded, di, dj, h, w)
            soft = sigmoid(scale(add_scalar(sub(img, neigh), -p.delta), 1.0 / p.tau))
            acc = soft if acc is None else add(acc, soft)
    return add_scalar(scale(acc, -1.0), float(p.neighbourhood))


def mse(pred: Tensor, label: Tensor) -> Tensor:
    diff = sub(pred, label)
    return tmean(mul(diff, diff))


def composite_loss(pred: Tensor, label: Tensor, p: RankParams,
                   weights: LossWeights) -> Tensor:
    """MSE plus beta * MSE between N_w-normalized soft rank maps.

    With beta = 0 this is exactly `mse` (the rank branch is skipped, not
    multiplied by zero). Always >= mse, with equality iff the rank maps
    coincide.
    """
    base = mse(pred, label)
    if weights.beta == 0.0:
        return base
    inv = 1.0 / p.neighbourhood
    rank_pred = scale(lrt_soft(pred, p), inv)
    rank_label = scale(lrt_soft(label, p), inv)
    return add(base, scale(mse(rank_pred, rank_label), weights.beta))


def pyramid_loss(preds, labels, p: RankParams, weights: LossWeights) -> Tensor:
    """Weighted sum of per-level composite losses."""
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    if not preds:
        raise ValueError("pyramid_loss needs at least one level")
    ks = weights.for_levels(len(preds))
    total = None
    for k, pred, label in zip(ks, preds, labels):
        term = scale(composite_loss(pred, label, p, weights), k)
        total = term if total is None else add(total, term)
    return total
