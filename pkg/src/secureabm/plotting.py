"""Minimal standalone SVG line plots."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

PALETTE = ("#1f77b4", "#2ca02c", "#ff7f0e", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = 50


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def emit_svg_plot(series: Mapping[str, Sequence[float]] | Sequence[Sequence[float]], path: str | Path | None = None,
                  labels: Sequence[str] | None = None, title: str = "", x_label: str = "step",
                  y_label: str = "normalized value", x_values: Sequence[float] | None = None) -> str:
    """Draw each series as a polyline; y is scaled to [0, 1] by the largest value of any series.

    Returns the SVG text and writes it to ``path`` when given.
    """
    if isinstance(series, Mapping):
        labels = list(series) if labels is None else list(labels)
        data = [np.asarray(v, dtype=float) for v in series.values()]
    else:
        data = [np.asarray(v, dtype=float) for v in series]
        labels = [f"series {k}" for k in range(len(data))] if labels is None else list(labels)
    if not data or any(len(d) == 0 for d in data):
        raise ValueError("need at least one non-empty series")
    if len({len(d) for d in data}) != 1:
        raise ValueError("series must have equal length")
    if len(labels) != len(data):
        raise ValueError("one label per series required")
    n = len(data[0])
    xs = np.arange(n, dtype=float) if x_values is None else np.asarray(x_values, dtype=float)
    top = max(float(np.max(np.abs(d))) for d in data) or 1.0
    x0, x1 = float(xs[0]), float(xs[-1]) if n > 1 else float(xs[0]) + 1.0
    span = (x1 - x0) or 1.0
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(x):
        return MARGIN + (x - x0) / span * pw

    def py(y):
        return HEIGHT - MARGIN - (y / top) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle">{_escape(title)}</text>')
    # axes with 0 / 0.5 / 1 ticks on the normalized y axis
    out.append(f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>')
    out.append(f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        y = HEIGHT - MARGIN - frac * ph
        out.append(f'<text x="{MARGIN - 6}" y="{_fmt(y + 4)}" text-anchor="end">{_fmt(frac)}</text>')
    for xv in (x0, (x0 + x1) / 2, x1):
        out.append(f'<text x="{_fmt(px(xv))}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle">{_fmt(xv)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle">{_escape(x_label)}</text>')
    out.append(f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {HEIGHT / 2})">{_escape(y_label)}</text>')
    for k, (d, label) in enumerate(zip(data, labels)):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, d))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN + 16 * k
        out.append(f'<line x1="{WIDTH - MARGIN - 120}" y1="{ly}" x2="{WIDTH - MARGIN - 100}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 94}" y="{ly + 4}">{_escape(label)}</text>')
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(svg)
    return svg


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
