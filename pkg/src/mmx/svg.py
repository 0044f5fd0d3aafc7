"""Minimal SVG line plots: axes, polylines, optional log-scale y."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, PAD = 640, 420, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
MAX_POINTS = 2000


def _thin(pts: np.ndarray) -> np.ndarray:
    if len(pts) <= MAX_POINTS:
        return pts
    idx = np.unique(np.linspace(0, len(pts) - 1, MAX_POINTS).astype(int))
    return pts[idx]


def _scale(lo, hi, a, b):
    span = hi - lo or 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _frame(title, xlabel, ylabel, x_rng, y_rng, log_y):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" font-size="12" transform="rotate(-90 14 {HEIGHT / 2})" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
    ]
    ylo, yhi = y_rng
    fmt = (lambda v: f"1e{v:.0f}") if log_y else (lambda v: f"{v:.3g}")
    for label, v, anchor, x, y in (
        (fmt(ylo), ylo, "end", PAD - 4, HEIGHT - PAD),
        (fmt(yhi), yhi, "end", PAD - 4, PAD + 4),
        (f"{x_rng[0]:.3g}", None, "middle", PAD, HEIGHT - PAD + 16),
        (f"{x_rng[1]:.3g}", None, "middle", WIDTH - PAD, HEIGHT - PAD + 16),
    ):
        out.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{label}</text>')
    return out


def write_line_plot(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
                    log_y: bool = False) -> None:
    """One polyline per series; ``series`` maps a label to (x, y) pairs."""
    arrays = {k: np.asarray(v, dtype=float).reshape(-1, 2) for k, v in series.items() if len(v)}
    if log_y:
        floor = min((a[:, 1][a[:, 1] > 0].min(initial=math.inf) for a in arrays.values()),
                    default=1.0)
        floor = floor if math.isfinite(floor) else 1.0
        arrays = {k: np.column_stack([a[:, 0], np.log10(np.maximum(a[:, 1], floor))])
                  for k, a in arrays.items()}
    allpts = np.vstack(list(arrays.values())) if arrays else np.zeros((1, 2))
    x_rng = (allpts[:, 0].min(), allpts[:, 0].max())
    y_rng = (allpts[:, 1].min(), allpts[:, 1].max())
    sx = _scale(*x_rng, PAD, WIDTH - PAD)
    sy = _scale(*y_rng, HEIGHT - PAD, PAD)
    out = _frame(title, xlabel, ylabel, x_rng, y_rng, log_y)
    for i, (label, pts) in enumerate(arrays.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in _thin(pts))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{coords}">'
                   f'<title>{escape(str(label))}</title></polyline>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def write_trajectories(path, series: dict) -> None:
    """Overlay (x1, y1) paths on the unit square with arrowheads on each segment."""
    out = _frame("OMWU trajectories", "x1", "y1", (0.0, 1.0), (0.0, 1.0), False)
    out.insert(1, '<defs><marker id="arrow" markerWidth="6" markerHeight="6" refX="5" refY="3" '
                  'orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="context-stroke"/></marker></defs>')
    sx = _scale(0.0, 1.0, PAD, WIDTH - PAD)
    sy = _scale(0.0, 1.0, HEIGHT - PAD, PAD)
    for i, (label, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = _thin(np.asarray(pts, dtype=float).reshape(-1, 2))
        out.append(f'<g stroke="{color}" stroke-width="1"><title>{escape(label)}</title>')
        for (a, b), (c, d) in zip(pts[:-1], pts[1:]):
            out.append(f'<line x1="{sx(a):.2f}" y1="{sy(b):.2f}" x2="{sx(c):.2f}" y2="{sy(d):.2f}" '
                       'marker-end="url(#arrow)"/>')
        out.append("</g>")
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))
