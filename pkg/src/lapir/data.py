"""Training-corpus preparation: augmentation, degradation, patch
extraction, per-level targets, batching and the patch cache.

Augmentation is a fixed deterministic product: 5 scales x 4 rotations x
3 flips = 60 variants per image, enumerated in that order. Degradation
trims the reference to a multiple of the scale factor and downsamples
with the antialiased bicubic. Patches slide on a fixed stride grid and
partial windows at the borders are discarded.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .imgio import list_images, load_image
from .metrics import luminance, modcrop
from .network import level_resolutions
from .resample import bicubic_resize

AUGMENT_SCALES = (1.0, 0.9, 0.8, 0.7, 0.6)
AUGMENT_ROTATIONS = (0, 90, 180, 270)
AUGMENT_FLIPS = ("none", "h", "v")
MIN_SIDE = 8


@dataclass
class ImageRecord:
    """One luminance plane with a provenance trail.

    `plane` is float64 in [0, 1]; colour inputs are converted on load
    (grayscale files are used as luminance directly). `provenance`
    records the source file and every transform applied since.
    """

    id: str
    plane: np.ndarray
    provenance: str


def load_records(directory) -> list[ImageRecord]:
    records = []
    for path in list_images(directory):
        plane = luminance(load_image(path))
        records.append(ImageRecord(id=path.stem, plane=plane, provenance=path.name))
    if not records:
        raise FileNotFoundError(f"no images found in {directory}")
    return records


def augment(records) -> list[ImageRecord]:
    """All 60 scale/rotation/flip variants of every record, in a fixed
    order. Variants scaled below 8 pixels on a side are dropped with a
    warning."""
    out = []
    for rec in records:
        for s in AUGMENT_SCALES:
            h, w = rec.plane.shape
            sh, sw = int(np.ceil(h * s)), int(np.ceil(w * s))
            if min(sh, sw) < MIN_SIDE:
                warnings.warn(f"{rec.id}: scale {s} gives {sh}x{sw}, below "
                              f"{MIN_SIDE}px; dropping", stacklevel=2)
                continue
            scaled = rec.plane if s == 1.0 else np.clip(
                bicubic_resize(rec.plane, sh, sw, antialias=True), 0.0, 1.0)
            for rot in AUGMENT_ROTATIONS:
                rotated = np.rot90(scaled, rot // 90)
                for flip in AUGMENT_FLIPS:
                    if flip == "h":
                        plane = rotated[:, ::-1]
                    elif flip == "v":
                        plane = rotated[::-1, :]
                    else:
                        plane = rotated
                    out.append(ImageRecord(
                        id=f"{rec.id}|s{s}|r{rot}|f{flip}",
                        plane=np.ascontiguousarray(plane),
                        provenance=f"{rec.provenance}|s{s}|r{rot}|f{flip}",
                    ))
    return out


def degrade(record: ImageRecord, n: int) -> tuple[ImageRecord, ImageRecord]:
    """(hr, lr): the record trimmed to a multiple of n, and its
    antialiased bicubic downsampling by exactly n."""
    hr_plane = modcrop(record.plane, n)
    h, w = hr_plane.shape
    lr_plane = np.clip(bicubic_resize(hr_plane, h // n, w // n, antialias=True), 0.0, 1.0)
    hr = ImageRecord(record.id, hr_plane, f"{record.provenance}|mod{n}")
    lr = ImageRecord(record.id, lr_plane, f"{record.provenance}|mod{n}|lr{n}")
    return hr, lr


def extract_patches(lr: np.ndarray, hr: np.ndarray, n: int, lr_size: int = 27,
                    stride: int = 14) -> list[tuple[np.ndarray, np.ndarray]]:
    """Aligned (lr, hr) patch pairs: lr_size^2 windows on a `stride` grid
    in the low-resolution plane, (n*lr_size)^2 windows at n-times the
    offsets in the high-resolution plane. Windows that do not fit are
    discarded."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    lh, lw = lr.shape
    if hr.shape != (n * lh, n * lw):
        raise ValueError(f"hr shape {hr.shape} does not match {n}x lr shape {lr.shape}")
    pairs = []
    if lh < lr_size or lw < lr_size:
        return pairs
    hr_size = n * lr_size
    for i in range(0, lh - lr_size + 1, stride):
        for j in range(0, lw - lr_size + 1, stride):
            lr_patch = lr[i:i + lr_size, j:j + lr_size]
            hr_patch = hr[n * i:n * i + hr_size, n * j:n * j + hr_size]
            pairs.append((np.ascontiguousarray(lr_patch), np.ascontiguousarray(hr_patch)))
    return pairs


def make_level_targets(hr_patch: np.ndarray, lr_patch: np.ndarray, scale: int,
                       levels: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-level (labels, skips) for one patch pair.

    Labels are antialiased downsamplings of the reference to each level
    resolution (the top label is the reference itself, untouched); skips
    are plain bicubic upsamplings of the input. Lists are indexed by
    level - 1.
    """
    h, w = lr_patch.shape
    res_h = level_resolutions(h, scale, levels)
    res_w = level_resolutions(w, scale, levels)
    if hr_patch.shape != (res_h[-1], res_w[-1]):
        raise ValueError(f"hr patch shape {hr_patch.shape} does not match "
                         f"top resolution {(res_h[-1], res_w[-1])}")
    labels, skips = [], []
    for s in range(1, levels + 1):
        if s == levels:
            labels.append(hr_patch)
        else:
            labels.append(np.clip(
                bicubic_resize(hr_patch, res_h[s], res_w[s], antialias=True), 0.0, 1.0))
        skips.append(bicubic_resize(lr_patch, res_h[s], res_w[s], antialias=False))
    return labels, skips


def batch_seed(base_seed: int, stage: int, level: int, epoch: int) -> int:
    """Shuffle seed for one epoch, a pure function of its coordinates, so
    a resumed run shuffles identically to an uninterrupted one."""
    ss = np.random.SeedSequence([int(base_seed), int(stage), int(level), int(epoch)])
    return int(ss.generate_state(1)[0])


def batch_indices(count: int, batch_size: int, seed: int):
    """Deterministic shuffled index batches; a short final batch is kept."""
    if count < 1:
        raise ValueError("need at least one item to batch")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def batches(pairs, batch_size: int, seed: int):
    """Shuffled batches of the given sequence (see `batch_indices`)."""
    pairs = list(pairs)
    for idx in batch_indices(len(pairs), batch_size, seed):
        yield [pairs[i] for i in idx]


def prepare_patches(image_dir, scale: int, lr_size: int = 27, stride: int = 14,
                    do_augment: bool = True, limit: int | None = None
                    ) -> tuple[np.ndarray, np.ndarray, dict]:
    """Full corpus pipeline: load, augment, degrade, extract.

    Returns (lr_stack, hr_stack) float64 arrays of shape (P, 1, s, s) and
    (P, 1, n*s, n*s), plus a manifest dict. `limit` keeps only the first
    P patches of the deterministic enumeration.
    """
    records = load_records(image_dir)
    sources = [r.provenance for r in records]
    variants = augment(records) if do_augment else records
    lr_list, hr_list = [], []
    for rec in variants:
        hr, lr = degrade(rec, scale)
        for lr_patch, hr_patch in extract_patches(lr.plane, hr.plane, scale,
                                                  lr_size, stride):
            lr_list.append(lr_patch)
            hr_list.append(hr_patch)
            if limit is not None and len(lr_list) >= limit:
                break
        if limit is not None and len(lr_list) >= limit:
            break
    if not lr_list:
        raise ValueError(f"no {lr_size}x{lr_size} patches could be extracted "
                         f"from {image_dir} at stride {stride}")
    lr_stack = np.stack(lr_list)[:, None]
    hr_stack = np.stack(hr_list)[:, None]
    manifest = {
        "scale": scale,
        "lr_size": lr_size,
        "stride": stride,
        "augmented": bool(do_augment),
        "source_images": sources,
        "variants": len(variants),
        "patches": len(lr_list),
    }
    return lr_stack, hr_stack, manifest


def save_cache(path, lr_stack: np.ndarray, hr_stack: np.ndarray, manifest: dict) -> None:
    """Write the patch cache (checkpoint record framing, float32) and a
    JSON manifest next to it."""
    meta = {
        "kind": "patch-cache",
        "scale": str(manifest["scale"]),
        "lr_size": str(manifest["lr_size"]),
        "stride": str(manifest["stride"]),
        "patches": str(manifest["patches"]),
    }
    save_checkpoint(path, Checkpoint(meta=meta, tensors={"lr": lr_stack, "hr": hr_stack}))
    manifest_path = Path(path).with_suffix(".json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_cache(path) -> tuple[np.ndarray, np.ndarray, dict[str, str]]:
    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != "patch-cache":
        raise ValueError(f"{path} is not a patch cache")
    for key in ("lr", "hr"):
        if key not in ckpt.tensors:
            raise ValueError(f"{path} is missing the {key!r} stack")
    lr = ckpt.tensors["lr"].astype(np.float64)
    hr = ckpt.tensors["hr"].astype(np.float64)
    if lr.shape[0] != hr.shape[0]:
        raise ValueError(f"{path}: {lr.shape[0]} lr patches vs {hr.shape[0]} hr patches")
    return lr, hr, ckpt.meta
