"""Self-contained SVG line plots for training logs.

No plotting library: the renderer writes polylines, axes, tick labels
and a legend directly. Arms are grouped by (stage, level) from the
training-log CSV; the x axis is the running step index within each arm.
"""

from __future__ import annotations

import csv
import html
from pathlib import Path

WIDTH, HEIGHT = 860, 500
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 170, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def render_plot(arms, title: str, xlabel: str, ylabel: str) -> str:
    """arms: iterable of (label, xs, ys) with equal-length sequences."""
    arms = [(label, list(xs), list(ys)) for label, xs, ys in arms]
    arms = [(label, xs, ys) for label, xs, ys in arms if xs]
    if not arms:
        raise ValueError("nothing to plot: every arm is empty")
    x_lo = min(min(xs) for _, xs, _ in arms)
    x_hi = max(max(xs) for _, xs, _ in arms)
    y_lo = min(min(ys) for _, _, ys in arms)
    y_hi = max(max(ys) for _, _, ys in arms)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x: float) -> float:
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">'
        f'{html.escape(title)}</text>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T + plot_h}" x2="{MARGIN_L + plot_w}" '
        f'y2="{MARGIN_T + plot_h}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{MARGIN_T + plot_h}" stroke="black"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(tx):.1f}" y1="{MARGIN_T + plot_h}" '
                     f'x2="{px(tx):.1f}" y2="{MARGIN_T + plot_h + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(tx):.1f}" y="{MARGIN_T + plot_h + 18}" '
                     f'text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{py(ty):.1f}" '
                     f'x2="{MARGIN_L}" y2="{py(ty):.1f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py(ty) + 4:.1f}" '
                     f'text-anchor="end">{ty:.4g}</text>')
    parts.append(f'<text x="{MARGIN_L + plot_w / 2:.1f}" y="{HEIGHT - 12}" '
                 f'text-anchor="middle">{html.escape(xlabel)}</text>')
    parts.append(f'<text x="18" y="{MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {MARGIN_T + plot_h / 2:.1f})">'
                 f'{html.escape(ylabel)}</text>')

    for i, (label, xs, ys) in enumerate(arms):
        colour = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" '
                     f'points="{points}"/>')
        ly = MARGIN_T + 14 + 18 * i
        lx = MARGIN_L + plot_w + 12
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="12" height="12" '
                     f'fill="{colour}"/>')
        parts.append(f'<text x="{lx + 18}" y="{ly + 1}">{html.escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def read_log_arms(path, column: str = "loss") -> list[tuple[str, list[float], list[float]]]:
    """Group a training log into per-(stage, level) arms of `column`
    against the running step index. Raises on malformed rows, naming the
    line."""
    arms: dict[str, tuple[list[float], list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValueError(f"{path}: no {column!r} column "
                             f"(found {reader.fieldnames})")
        needed = {"stage", "level", column}
        missing = needed - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                stage = int(rec["stage"])
                level = int(rec["level"])
                value = float(rec[column])
            except (TypeError, ValueError):
                raise ValueError(f"{path}: malformed row at line {lineno}: {rec}") from None
            key = f"stage {stage}" + (f" level {level}" if stage == 1 else "")
            xs, ys = arms.setdefault(key, ([], []))
            xs.append(float(len(xs)))
            ys.append(value)
    if not arms:
        raise ValueError(f"{path}: log has no data rows")
    return [(label, xs, ys) for label, (xs, ys) in arms.items()]


def plot_training_logs(paths, out_path, column: str = "loss") -> None:
    arms = []
    paths = list(paths)
    for path in paths:
        prefix = f"{Path(path).stem}: " if len(paths) > 1 else ""
        for label, xs, ys in read_log_arms(path, column):
            arms.append((prefix + label, xs, ys))
    svg = render_plot(arms, title=f"training {column}", xlabel="step",
                      ylabel=column)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
