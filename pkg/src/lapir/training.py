"""Two-stage training protocol.

Stage 1 trains the pyramid one level at a time with every other level
frozen: frozen levels run outside the recorded graph in eval mode, their
bytes are asserted unchanged, and each level gets a fresh momentum-SGD
optimizer with separate learning rates for ordinary and transposed
convolutions. Stage 2 fine-tunes all levels jointly against the weighted
multi-level loss with RMSProp.

All live state is rounded to float32 values at every epoch boundary and
the batch order is a pure function of (seed, stage, level, epoch), so a
run that is checkpointed and resumed is bit-identical to an
uninterrupted one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import (Checkpoint, config_meta, load_checkpoint,
                         network_checkpoint, restore_network,
                         restore_optimizer, save_checkpoint)
from .data import batch_indices, batch_seed, make_level_targets
from .network import (Network, build_network, forward_stage1, forward_train,
                      is_transposed_param)
from .optim import (MomentumSgd, RmsProp, TrainSchedule, clip_gradients,
                    quantize_optimizer_f32, schedule_at)
from .rank_loss import LossWeights, RankParams, composite_loss, pyramid_loss
from .tensor import Tensor

LOG_FIELDS = ("stage", "level", "epoch", "iter", "loss", "lr", "clip")


class TrainLogger:
    """Appends one CSV row per optimization step."""

    def __init__(self, path, resume: bool = False):
        self.path = Path(path)
        fresh = not (resume and self.path.exists())
        self._fh = open(self.path, "a" if not fresh else "w", newline="")
        self._writer = csv.writer(self._fh)
        if fresh:
            self._writer.writerow(LOG_FIELDS)

    def row(self, stage: int, level: int, epoch: int, it: int, loss: float,
            lr: float, clip: float) -> None:
        self._writer.writerow([stage, level, epoch, it,
                               f"{loss:.8g}", f"{lr:.8g}", f"{clip:.8g}"])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class TrainData:
    """Patch stacks plus per-level targets, all (P, 1, h, w) float64."""

    lr: np.ndarray
    labels: list[np.ndarray]
    skips: list[np.ndarray]

    @property
    def count(self) -> int:
        return self.lr.shape[0]


def prepare_train_data(lr_stack: np.ndarray, hr_stack: np.ndarray, net: Network) -> TrainData:
    cfg = net.cfg
    per_level: list[list[np.ndarray]] = [[] for _ in range(cfg.levels)]
    per_skip: list[list[np.ndarray]] = [[] for _ in range(cfg.levels)]
    for lr_patch, hr_patch in zip(lr_stack[:, 0], hr_stack[:, 0]):
        labels, skips = make_level_targets(hr_patch, lr_patch, cfg.scale, cfg.levels)
        for s in range(cfg.levels):
            per_level[s].append(labels[s])
            per_skip[s].append(skips[s])
    labels = [np.stack(planes)[:, None] for planes in per_level]
    skips = [np.stack(planes)[:, None] for planes in per_skip]
    return TrainData(lr=lr_stack, labels=labels, skips=skips)


def _lr_selector(lr_conv: float, lr_transposed: float):
    return lambda name: lr_transposed if is_transposed_param(name) else lr_conv


def _quantize_all(net: Network, opt) -> None:
    net.store.quantize_f32()
    quantize_optimizer_f32(opt)


def _write_latest(net: Network, opt, out_dir: Path, seed: int, stage: int,
                  level: int, epochs_done: int) -> None:
    meta = {
        "train.seed": str(seed),
        "train.stage": str(stage),
        "train.level": str(level),
        "train.epochs_done": str(epochs_done),
    }
    save_checkpoint(out_dir / "latest.ckpt", network_checkpoint(net, meta, opt))


def _frozen_snapshot(net: Network, trainable: set[str], active_prefix: str | None):
    params = {n: t.data.tobytes() for n, t in net.store.params.items()
              if n not in trainable}
    buffers = {n: b.tobytes() for n, b in net.store.buffers.items()
               if active_prefix is None or not n.startswith(active_prefix)}
    return params, buffers


def _assert_frozen_unchanged(net: Network, snapshot, where: str) -> None:
    params, buffers = snapshot
    for name, blob in params.items():
        if net.store.params[name].data.tobytes() != blob:
            raise AssertionError(f"frozen parameter {name!r} changed during {where}")
    for name, blob in buffers.items():
        if net.store.buffers[name].tobytes() != blob:
            raise AssertionError(f"frozen buffer {name!r} changed during {where}")


def _set_stage1_trainable(net: Network, level: int) -> set[str]:
    names = set(net.trainable_names_for_level(level))
    net.store.set_trainable(net.store.params.keys(), False)
    net.store.set_trainable(names, True)
    return names


def train_stage1(net: Network, data: TrainData, sched: TrainSchedule, seed: int,
                 out_dir: Path, logger: TrainLogger, start_level: int = 1,
                 start_epoch: int = 0, resume_optimizer=None) -> None:
    """Level-by-level pass; writes latest.ckpt each epoch and
    stage1_level<s>.ckpt when a level completes."""
    cfg = net.cfg
    rank = RankParams(cfg.window, cfg.delta, cfg.tau)
    weights = LossWeights(cfg.beta, cfg.level_weights)
    for level in range(start_level, cfg.levels + 1):
        trainable = _set_stage1_trainable(net, level)
        opt = MomentumSgd({n: net.store.params[n] for n in trainable},
                          momentum=sched.momentum, weight_decay=sched.weight_decay)
        first_epoch = start_epoch if level == start_level else 0
        if resume_optimizer is not None and level == start_level:
            restore_optimizer(opt, resume_optimizer)
        snapshot = _frozen_snapshot(net, trainable, f"level{level}.")
        for epoch in range(first_epoch, sched.epochs):
            lr_conv, lr_transposed, clip = schedule_at(sched, epoch)
            lr_for = _lr_selector(lr_conv, lr_transposed)
            order = batch_indices(data.count, sched.batch_size,
                                  batch_seed(seed, 1, level, epoch))
            for it, idx in enumerate(order):
                xb = Tensor(data.lr[idx])
                skip = Tensor(data.skips[level - 1][idx])
                label = Tensor(data.labels[level - 1][idx])
                pred = forward_stage1(xb, net, level, skip)
                loss = composite_loss(pred, label, rank, weights)
                loss.assert_finite("stage-1 training loss")
                net.store.zero_grad()
                loss.backward()
                clip_gradients((net.store.params[n] for n in trainable), clip)
                opt.step(lr_for)
                logger.row(1, level, epoch, it, loss.item(), lr_conv, clip)
            _quantize_all(net, opt)
            _write_latest(net, opt, out_dir, seed, 1, level, epoch + 1)
        _assert_frozen_unchanged(net, snapshot, f"stage 1 level {level}")
        save_checkpoint(out_dir / f"stage1_level{level}.ckpt",
                        network_checkpoint(net, {"train.seed": str(seed),
                                                 "train.stage": "1",
                                                 "train.level": str(level),
                                                 "train.epochs_done": str(sched.epochs)}))


def train_stage2(net: Network, data: TrainData, sched: TrainSchedule, seed: int,
                 out_dir: Path, logger: TrainLogger, start_epoch: int = 0,
                 resume_optimizer=None) -> Path:
    """Joint fine-tuning of all levels; returns the final checkpoint path.

    With zero epochs the final checkpoint equals the incoming state.
    """
    cfg = net.cfg
    rank = RankParams(cfg.window, cfg.delta, cfg.tau)
    weights = LossWeights(cfg.beta, cfg.level_weights)
    net.store.set_trainable(net.store.params.keys(), True)
    opt = RmsProp(net.store.params, decay=sched.rms_decay,
                  epsilon=sched.rms_epsilon, weight_decay=sched.weight_decay)
    if resume_optimizer is not None:
        restore_optimizer(opt, resume_optimizer)
    for epoch in range(start_epoch, sched.epochs):
        lr, _, clip = schedule_at(sched, epoch)
        order = batch_indices(data.count, sched.batch_size,
                              batch_seed(seed, 2, 0, epoch))
        for it, idx in enumerate(order):
            xb = Tensor(data.lr[idx])
            skips = [Tensor(sk[idx]) for sk in data.skips]
            labels = [Tensor(lb[idx]) for lb in data.labels]
            preds = forward_train(xb, net, skips)
            loss = pyramid_loss(preds, labels, rank, weights)
            loss.assert_finite("stage-2 training loss")
            net.store.zero_grad()
            loss.backward()
            clip_gradients(net.store.params.values(), clip)
            opt.step(lambda name: lr)
            logger.row(2, 0, epoch, it, loss.item(), lr, clip)
        _quantize_all(net, opt)
        _write_latest(net, opt, out_dir, seed, 2, 0, epoch + 1)
    final = out_dir / "final.ckpt"
    net.store.quantize_f32()
    save_checkpoint(final, network_checkpoint(net, {"train.seed": str(seed),
                                                    "train.stage": "2",
                                                    "train.level": "0",
                                                    "train.epochs_done": str(sched.epochs)}))
    return final


def run_training(lr_stack: np.ndarray, hr_stack: np.ndarray, cfg, sched1: TrainSchedule,
                 sched2: TrainSchedule, seed: int, out_dir, log_path,
                 resume: bool = False, skip_stage1: bool = False) -> Path:
    """End-to-end driver: build (or restore) the network, run stage 1
    then stage 2, return the final checkpoint path.

    `skip_stage1` is the ablation arm that fine-tunes directly from the
    random initialization. `resume` picks up from out_dir/latest.ckpt.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = build_network(cfg, seed)
    net.store.quantize_f32()  # initialization is float32-valued from the start

    start_stage, start_level, start_epoch = 1, 1, 0
    resume_opt = None
    if resume:
        latest = out_dir / "latest.ckpt"
        if not latest.exists():
            raise FileNotFoundError(f"cannot resume: {latest} does not exist")
        ckpt = load_checkpoint(latest)
        saved = {k: v for k, v in ckpt.meta.items() if k.startswith("network.")}
        if saved != config_meta(cfg):
            raise ValueError("checkpoint network config does not match the requested one")
        resume_opt = restore_network(net, ckpt)
        start_stage = int(ckpt.meta["train.stage"])
        start_level = int(ckpt.meta["train.level"])
        start_epoch = int(ckpt.meta["train.epochs_done"])
        seed = int(ckpt.meta["train.seed"])

    data = prepare_train_data(lr_stack, hr_stack, net)
    with TrainLogger(log_path, resume=resume) as logger:
        if start_stage == 1 and not skip_stage1:
            if start_epoch >= sched1.epochs:
                # the resumed level is already complete; its optimizer dies with it
                start_level, start_epoch, resume_opt = start_level + 1, 0, None
            if start_level <= cfg.levels:
                train_stage1(net, data, sched1, seed, out_dir, logger,
                             start_level=start_level, start_epoch=start_epoch,
                             resume_optimizer=resume_opt)
            stage2_epoch, stage2_opt = 0, None
        elif start_stage == 1:
            stage2_epoch, stage2_opt = 0, None
        else:
            stage2_epoch, stage2_opt = start_epoch, resume_opt
        return train_stage2(net, data, sched2, seed, out_dir, logger,
                            start_epoch=stage2_epoch, resume_optimizer=stage2_opt)
