"""Optimizers and the decay schedules of the two training stages.

Stage 1 uses SGD with momentum and two learning-rate classes (ordinary
convolutions vs transposed convolutions); stage 2 uses RMSProp with a
single rate. Both stages decay the learning rate by a fixed factor every
two epochs and clamp every gradient element to a clip value that decays
tenfold on the same period. Weight decay enters as an additive L2 term
on the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class TrainSchedule:
    stage: int
    epochs: int
    batch_size: int
    base_lr_conv: float
    base_lr_transposed: float
    lr_decay: float = 0.94
    lr_period: int = 2
    clip_value: float = 1.0
    clip_decay: float = 0.1
    clip_period: int = 2
    momentum: float = 0.9
    rms_decay: float = 0.9
    rms_epsilon: float = 1.0
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_period < 1 or self.clip_period < 1:
            raise ValueError("decay periods must be >= 1")

    @classmethod
    def stage1(cls, epochs: int = 4, batch_size: int = 128) -> "TrainSchedule":
        return cls(stage=1, epochs=epochs, batch_size=batch_size,
                   base_lr_conv=0.1, base_lr_transposed=0.01)

    @classmethod
    def stage2(cls, epochs: int = 2, batch_size: int = 128) -> "TrainSchedule":
        return cls(stage=2, epochs=epochs, batch_size=batch_size,
                   base_lr_conv=0.00045, base_lr_transposed=0.00045)


def schedule_at(sched: TrainSchedule, epoch: int) -> tuple[float, float, float]:
    """(lr_conv, lr_transposed, clip_value) in effect during `epoch`
    (0-based). Decays apply at whole periods: epoch 0 and 1 share the
    base values, epochs 2 and 3 one decay step, and so on."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    lr_fac = sched.lr_decay ** (epoch // sched.lr_period)
    clip = sched.clip_value * sched.clip_decay ** (epoch // sched.clip_period)
    return sched.base_lr_conv * lr_fac, sched.base_lr_transposed * lr_fac, clip


def clip_gradients(params, clip_value: float) -> None:
    """Clamp every gradient element of the given tensors to
    [-clip_value, clip_value], in place. Tensors without a gradient are
    skipped."""
    if clip_value <= 0:
        raise ValueError("clip_value must be positive")
    for t in params:
        if t.grad is not None:
            np.clip(t.grad, -clip_value, clip_value, out=t.grad)


class MomentumSgd:
    """SGD with classical momentum and one velocity buffer per parameter:
    v = m*v + (g + wd*p); p -= lr(name)*v."""

    kind = "sgd"

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self, lr_for) -> None:
        for name, t in self.params.items():
            if not t.requires_grad:
                continue
            if t.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            v = self.state[name]
            v *= self.momentum
            v += t.grad + self.weight_decay * t.data
            t.data -= lr_for(name) * v


class RmsProp:
    """RMSProp with one mean-square accumulator per parameter:
    ms = d*ms + (1-d)*g^2; p -= lr*g/sqrt(ms + eps). The epsilon sits
    inside the square root and defaults to 1.0, which tames the first
    steps when ms is still near zero."""

    kind = "rmsprop"

    def __init__(self, params: dict[str, Tensor], decay: float = 0.9,
                 epsilon: float = 1.0, weight_decay: float = 0.0):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.params = dict(params)
        self.decay = decay
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.state = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self, lr_for) -> None:
        for name, t in self.params.items():
            if not t.requires_grad:
                continue
            if t.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            g = t.grad + self.weight_decay * t.data
            ms = self.state[name]
            ms *= self.decay
            ms += (1.0 - self.decay) * g * g
            t.data -= lr_for(name) * g / np.sqrt(ms + self.epsilon)


def quantize_optimizer_f32(opt) -> None:
    """Round optimizer accumulators to float32 values so checkpointed
    state reloads bit-identically."""
    for arr in opt.state.values():
        arr[...] = arr.astype(np.float32).astype(np.float64)
