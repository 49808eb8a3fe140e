"""Benchmark evaluation: degrade each reference image, super-resolve it,
and score PSNR/SSIM on the luminance channel.

Per image: trim the reference to a multiple of the scale factor, take
the studio-swing luminance, downsample with the antialiased bicubic,
upscale with the method under test (plain bicubic or the network), shave
a scale-factor border, then score. Chroma never enters the metrics.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imgio import list_images, load_image
from .metrics import (crop_border, luminance, modcrop, psnr, rgb_to_ycbcr,
                      ssim, ycbcr_to_rgb)
from .network import Network, forward_infer
from .resample import bicubic_resize

REPORT_FIELDS = ("dataset", "image", "scale", "method", "psnr_db", "ssim", "runtime_s")
AGGREGATE_ID = "mean"


@dataclass
class MetricRow:
    dataset: str
    image: str
    scale: int
    method: str
    psnr_db: float
    ssim: float
    runtime_s: float


@dataclass
class MetricsReport:
    rows: list[MetricRow]
    aggregates: list[MetricRow]
    skipped: list[str]


def super_resolve(img: np.ndarray, net: Network, clamp: bool = True) -> np.ndarray:
    """Upscale a [0, 1] image by the network's scale factor.

    Grayscale planes go through the network directly. Colour images are
    converted to YCbCr; the network upscales luminance, plain bicubic
    upscales chroma, and the result converts back to RGB.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return forward_infer(img, net, clamp=clamp)
    ycbcr = rgb_to_ycbcr(img)
    n = net.cfg.scale
    h, w = img.shape[:2]
    out = np.empty((n * h, n * w, 3))
    out[:, :, 0] = forward_infer(ycbcr[:, :, 0], net, clamp=clamp)
    out[:, :, 1:] = bicubic_resize(ycbcr[:, :, 1:], n * h, n * w, antialias=False)
    return ycbcr_to_rgb(out, clamp=clamp)


def _evaluate_plane(y_hr: np.ndarray, scale: int, method: str,
                    net: Network | None) -> tuple[float, float, float]:
    h, w = y_hr.shape
    y_lr = np.clip(bicubic_resize(y_hr, h // scale, w // scale, antialias=True), 0.0, 1.0)
    start = time.perf_counter()
    if method == "bicubic":
        y_sr = np.clip(bicubic_resize(y_lr, h, w, antialias=False), 0.0, 1.0)
    else:
        y_sr = forward_infer(y_lr, net)
    runtime = time.perf_counter() - start
    ref = crop_border(y_hr, scale)
    out = crop_border(y_sr, scale)
    return psnr(ref, out), ssim(ref, out), runtime


def evaluate(dataset_dir, scale: int, method: str, net: Network | None = None,
             dataset_name: str | None = None) -> MetricsReport:
    """Score every image in a directory. Unreadable files are skipped
    with a warning and flagged as all-NaN rows."""
    if method not in ("bicubic", "network"):
        raise ValueError(f"unknown method {method!r}")
    if method == "network":
        if net is None:
            raise ValueError("method 'network' needs a network")
        if net.cfg.scale != scale:
            raise ValueError(f"network upscales by {net.cfg.scale}, asked for {scale}")
    name = dataset_name or Path(dataset_dir).name
    rows, skipped = [], []
    for path in list_images(dataset_dir):
        try:
            img = load_image(path)
        except Exception as exc:  # corrupt file: keep going, flag it
            warnings.warn(f"skipping unreadable image {path}: {exc}", stacklevel=2)
            skipped.append(path.name)
            rows.append(MetricRow(name, path.stem, scale, method,
                                  math.nan, math.nan, 0.0))
            continue
        y_hr = luminance(modcrop(img, scale))
        p, s, runtime = _evaluate_plane(y_hr, scale, method, net)
        rows.append(MetricRow(name, path.stem, scale, method, p, s, runtime))
    scored = [r for r in rows if not math.isnan(r.ssim)]
    aggregates = []
    if scored:
        aggregates.append(MetricRow(
            name, AGGREGATE_ID, scale, method,
            float(np.mean([r.psnr_db for r in scored])),
            float(np.mean([r.ssim for r in scored])),
            float(np.mean([r.runtime_s for r in scored]))))
    return MetricsReport(rows=rows, aggregates=aggregates, skipped=skipped)


def merge_reports(reports) -> MetricsReport:
    merged = MetricsReport(rows=[], aggregates=[], skipped=[])
    for rep in reports:
        merged.rows += rep.rows
        merged.aggregates += rep.aggregates
        merged.skipped += rep.skipped
    return merged


def _format(value: float, places: int) -> str:
    if math.isinf(value):
        return "inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.{places}f}"


def write_report(report: MetricsReport, path) -> None:
    """Per-image rows first, then one mean row per (dataset, method)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_FIELDS)
        for row in report.rows + report.aggregates:
            writer.writerow([row.dataset, row.image, row.scale, row.method,
                             _format(row.psnr_db, 4), _format(row.ssim, 5),
                             _format(row.runtime_s, 4)])


def read_report(path) -> list[MetricRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(REPORT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path} is missing columns {sorted(missing)}")
        for rec in reader:
            rows.append(MetricRow(rec["dataset"], rec["image"], int(rec["scale"]),
                                  rec["method"], float(rec["psnr_db"]),
                                  float(rec["ssim"]), float(rec["runtime_s"])))
    return rows


def load_reference(path) -> list[dict]:
    refs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"dataset", "scale", "method", "psnr_db", "ssim"}
        missing = needed - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path} is missing columns {sorted(missing)}")
        for rec in reader:
            refs.append({"dataset": rec["dataset"], "scale": int(rec["scale"]),
                         "method": rec["method"], "psnr_db": float(rec["psnr_db"]),
                         "ssim": float(rec["ssim"])})
    return refs


def compare_reference(report: MetricsReport, reference_path, tol_psnr: float = 0.15,
                      tol_ssim: float = 0.01) -> tuple[bool, list[dict]]:
    """Check report means against published reference values.

    Rows without a matching reference are reported as missing but do not
    fail the comparison; any matched row outside tolerance does.
    """
    refs = load_reference(reference_path)
    results = []
    ok = True
    for agg in report.aggregates:
        match = next((r for r in refs if r["dataset"].lower() == agg.dataset.lower()
                      and r["scale"] == agg.scale and r["method"] == agg.method), None)
        if match is None:
            results.append({"dataset": agg.dataset, "scale": agg.scale,
                            "method": agg.method, "status": "missing"})
            continue
        d_psnr = agg.psnr_db - match["psnr_db"]
        d_ssim = agg.ssim - match["ssim"]
        passed = abs(d_psnr) <= tol_psnr and abs(d_ssim) <= tol_ssim
        ok = ok and passed
        results.append({"dataset": agg.dataset, "scale": agg.scale,
                        "method": agg.method, "psnr_db": agg.psnr_db,
                        "ref_psnr_db": match["psnr_db"], "delta_psnr_db": d_psnr,
                        "ssim": agg.ssim, "ref_ssim": match["ssim"],
                        "delta_ssim": d_ssim,
                        "status": "pass" if passed else "fail"})
    return ok, results
