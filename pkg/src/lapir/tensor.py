"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value in the library is a `Tensor`: a (N, C, H, W) float64 array plus
an optional gradient buffer. Operations record a backward rule on their
output; `backward()` replays the recorded graph in reverse topological
order, visiting each operation exactly once and accumulating gradients
additively across fan-out. Gradients are never zeroed implicitly - callers
reset them between optimizer steps.

Internal compute is float64 throughout; float32 appears only in the
checkpoint serialization layer.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording of backward rules inside the block."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A (N, C, H, W) float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"tensor data must be 4-D (N,C,H,W), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def assert_finite(self, what: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"{what} contains NaN or Inf values")

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar; binary ops require exactly matching shapes (no broadcasting)
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Build a Tensor from array-like data of up to 4 dimensions.

    Missing leading axes are added as singletons: a scalar becomes
    (1,1,1,1), a (H,W) array becomes (1,1,H,W).
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 4:
        raise ValueError(f"at most 4 dimensions supported, got {arr.ndim}")
    arr = arr.reshape((1,) * (4 - arr.ndim) + arr.shape)
    return Tensor(arr, requires_grad=requires_grad)


def scalar(value: float) -> Tensor:
    return Tensor(np.full((1, 1, 1, 1), float(value)))


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Create an op output, recording `backward_fn` when gradients are live.

    `backward_fn(out_grad)` must return one gradient array (or None) per
    parent, aligned with `parents`.
    """
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(a, float(b))
    _check_same_shape("add", a, b)
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(a, -float(b))
    _check_same_shape("sub", a, b)
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    _check_same_shape("mul", a, b)
    return make_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op(a.data + c, (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_values(a.data)
    return make_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def tsum(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise ValueError("sum of an empty tensor is rejected")
    val = np.full((1, 1, 1, 1), np.sum(a.data))
    return make_op(val, (a,), lambda g: (np.full_like(a.data, g.reshape(())),))


def tmean(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise ValueError("mean of an empty tensor is rejected")
    n = a.data.size
    val = np.full((1, 1, 1, 1), np.sum(a.data) / n)
    return make_op(val, (a,), lambda g: (np.full_like(a.data, g.reshape(()) / n),))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; backward splits the gradient."""
    if not parts:
        raise ValueError("concat of zero tensors is rejected")
    ref = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ValueError(f"concat: incompatible shapes {ref} vs {p.shape}")
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def backward_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make_op(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward_fn)


def crop_spatial(a: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Take a spatial window; backward embeds the gradient back with zeros."""
    _, _, h, w = a.shape
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ValueError(f"crop window ({top},{left},{height},{width}) outside {a.shape}")

    def backward_fn(g):
        full = np.zeros_like(a.data)
        full[:, :, top:top + height, left:left + width] = g
        return (full,)

    return make_op(np.ascontiguousarray(a.data[:, :, top:top + height, left:left + width]),
                   (a,), backward_fn)


def pad_replicate(a: Tensor, pad: int) -> Tensor:
    """Replicate-pad the spatial axes; backward folds edge copies back in."""
    if pad < 0:
        raise ValueError("pad must be non-negative")
    if pad == 0:
        return make_op(a.data.copy(), (a,), lambda g: (g,))
    data = np.pad(a.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    h, w = a.shape[2], a.shape[3]
    # every padded row/col maps to a clamped source index; backward sums copies
    src_r = np.clip(np.arange(h + 2 * pad) - pad, 0, h - 1)
    src_c = np.clip(np.arange(w + 2 * pad) - pad, 0, w - 1)

    def backward_fn(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, (slice(None), slice(None), src_r[:, None], src_c[None, :]), g)
        return (acc,)

    return make_op(data, (a,), backward_fn)


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar root over the recorded graph."""
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward root is not part of a recorded computation")

    # iterative post-order: children (inputs) before consumers
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    root._accumulate(np.ones((1, 1, 1, 1)))
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if parent.requires_grad and g is not None:
                parent._accumulate(g)


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must map a tensor to a scalar tensor and be deterministic. Relative
    error per element is |analytic - cd| / max(|analytic|, |cd|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check target must return a scalar tensor")
    backward(out)
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    base = x.data
    with no_grad():
        for idx in np.ndindex(base.shape):
            bump = base.copy()
            bump[idx] = base[idx] + eps
            hi = f(Tensor(bump)).item()
            bump[idx] = base[idx] - eps
            lo = f(Tensor(bump)).item()
            numeric[idx] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
