"""Minimal deterministic SVG scatter plots of 2D embeddings.

Hand-rolled on purpose: the plots are informational artifacts of the CLI,
and emitting the markup directly keeps the bytes identical run to run for
a fixed input, which plotting libraries do not guarantee.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

# Categorical palette; label k gets PALETTE[k % len(PALETTE)].
PALETTE = (
    "#4477aa", "#ee6677", "#228833", "#ccbb44",
    "#66ccee", "#aa3377", "#bbbbbb", "#222255",
    "#997700", "#cc3311", "#117733", "#882255",
)

CANVAS = 640
MARGIN = 40


def _fmt(x: float) -> str:
    # Fixed decimals so coordinates never pick up platform repr noise.
    return f"{x:.2f}"


def scatter_svg(points2d: np.ndarray, labels=None, title: str = "") -> str:
    """SVG document for a labeled 2D scatter; returns the markup as a string."""
    y = np.asarray(points2d, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 2 or len(y) == 0:
        raise InputError("need a non-empty (N, 2) array to plot")
    if labels is None:
        labels = np.zeros(len(y), dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(y),):
        raise InputError("labels must align with the points")

    lo = y.min(axis=0)
    span = y.max(axis=0) - lo
    extent = float(span.max())
    if extent <= 0:
        extent = 1.0
    inner = CANVAS - 2 * MARGIN
    scale = inner / extent
    # Center the shorter axis inside the square canvas.
    offset = MARGIN + (inner - span * scale) / 2.0
    radius = max(1.5, inner / max(len(y), 1) ** 0.5 / 6.0)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" '
        f'height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">',
        f'<rect width="{CANVAS}" height="{CANVAS}" fill="white"/>',
    ]
    if title:
        lines.append(f'<text x="{MARGIN}" y="{MARGIN // 2 + 5}" '
                     f'font-family="monospace" font-size="14">{title}</text>')
    for i in range(len(y)):
        cx = offset[0] + (y[i, 0] - lo[0]) * scale
        cy = CANVAS - (offset[1] + (y[i, 1] - lo[1]) * scale)  # svg y grows down
        color = PALETTE[int(labels[i]) % len(PALETTE)]
        lines.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" '
                     f'r="{_fmt(radius)}" fill="{color}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_scatter(path, points2d: np.ndarray, labels=None, title: str = "") -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(scatter_svg(points2d, labels, title))
