"""Shared fixtures: synthetic corpora and the slow trained-model runs.

BLAS thread pins happen at import time, before numpy loads, so that
in-process training comparisons are deterministic.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import dataclasses
import time

import numpy as np
import pytest

from lapir.config import desk_preset
from lapir.data import prepare_patches
from lapir.imgio import save_image
from lapir.training import run_training


def make_edge_images(directory, count: int = 6, side: int = 96, seed: int = 11):
    """Blocky high-contrast planes: the kind of content where plain
    bicubic interpolation leaves the most recoverable detail."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for k in range(count):
        plane = np.full((side, side), 0.5)
        step = 6 + 2 * (k % 3)
        for r in range(0, side, step):
            for c in range(0, side, step):
                plane[r:r + step, c:c + step] = rng.choice([0.15, 0.35, 0.65, 0.85])
        yy, xx = np.mgrid[0:side, 0:side]
        mask = ((xx + yy) // (8 + k)) % 2 == 0
        plane[mask] = 0.75 * plane[mask] + 0.08
        path = directory / f"edges{k}.png"
        save_image(path, np.clip(plane, 0.0, 1.0))
        paths.append(path)
    return paths


def make_smooth_images(directory, count: int = 3, side: int = 48, seed: int = 3):
    """Small low-frequency RGB images for metric/evaluation tests."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for k in range(count):
        yy, xx = np.mgrid[0:side, 0:side] / side
        base = 0.5 + 0.3 * np.sin(2 * np.pi * (xx * (k + 1) + 0.2 * yy))
        img = np.stack([base, np.roll(base, 3, axis=0),
                        0.4 + 0.2 * rng.random((side, side))], axis=-1)
        path = directory / f"smooth{k}.png"
        save_image(path, np.clip(img, 0.0, 1.0))
        paths.append(path)
    return paths


@pytest.fixture(scope="session")
def edge_corpus_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("edge_corpus")
    make_edge_images(directory)
    return directory


@pytest.fixture(scope="session")
def edge_patches(edge_corpus_dir):
    cfg = desk_preset()
    lr, hr, manifest = prepare_patches(edge_corpus_dir, cfg.network.scale,
                                       lr_size=cfg.network.input_patch,
                                       stride=cfg.data.stride)
    return lr, hr, manifest


@pytest.fixture(scope="session")
def smooth_rgb_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("smooth_rgb")
    make_smooth_images(directory)
    return directory


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, edge_patches):
    """One full desk-preset training run on the edge corpus (the slow
    fixture every trained-model test shares)."""
    lr, hr, _ = edge_patches
    cfg = desk_preset()
    out = tmp_path_factory.mktemp("desk_run")
    started = time.monotonic()
    final = run_training(lr, hr, cfg.network, cfg.stage1, cfg.stage2,
                         seed=0, out_dir=out, log_path=out / "log.csv")
    elapsed = time.monotonic() - started
    return {"cfg": cfg, "out": out, "final": final,
            "log": out / "log.csv", "seconds": elapsed,
            "lr": lr, "hr": hr}


@pytest.fixture(scope="session")
def random_init_run(tmp_path_factory, edge_patches):
    """Ablation arm: joint fine-tuning from random init for the same
    total epoch budget as the two-stage protocol."""
    lr, hr, _ = edge_patches
    cfg = desk_preset()
    total = cfg.network.levels * cfg.stage1.epochs + cfg.stage2.epochs
    sched2 = dataclasses.replace(cfg.stage2, epochs=total)
    out = tmp_path_factory.mktemp("random_init_run")
    final = run_training(lr, hr, cfg.network, cfg.stage1, sched2,
                         seed=0, out_dir=out, log_path=out / "log.csv",
                         skip_stage1=True)
    return {"cfg": cfg, "out": out, "final": final, "log": out / "log.csv"}


@pytest.fixture(scope="session")
def beta_zero_run(tmp_path_factory, edge_patches):
    """Ablation arm: identical protocol with the rank term switched off."""
    lr, hr, _ = edge_patches
    cfg = desk_preset()
    net_cfg = dataclasses.replace(cfg.network, beta=0.0)
    out = tmp_path_factory.mktemp("beta_zero_run")
    final = run_training(lr, hr, net_cfg, cfg.stage1, cfg.stage2,
                         seed=0, out_dir=out, log_path=out / "log.csv")
    return {"net_cfg": net_cfg, "out": out, "final": final, "log": out / "log.csv"}


def epoch_means(log_path):
    """CSV training log -> {(stage, level): [per-epoch mean loss, ...]}."""
    import csv

    by: dict[tuple[str, str, int], list[float]] = {}
    with open(log_path) as fh:
        for rec in csv.DictReader(fh):
            key = (rec["stage"], rec["level"], int(rec["epoch"]))
            by.setdefault(key, []).append(float(rec["loss"]))
    phases: dict[tuple[str, str], list[float]] = {}
    for stage, level, epoch in sorted(by):
        phases.setdefault((stage, level), []).append(
            float(np.mean(by[(stage, level, epoch)])))
    return phases
