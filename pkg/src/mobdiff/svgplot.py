"""Dependency-free static SVG rendering for the standard figures: line
series (loss curves, ECDFs, profiles) and grid heat maps (flow matrices)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_W, _H, _PAD = 640, 420, 50


def _scale(v, lo, hi, out_lo, out_hi):
    if hi == lo:
        return (out_lo + out_hi) / 2.0
    return out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)


def line_chart(series: dict[str, np.ndarray], path, x=None, title: str = "") -> Path:
    """Polyline chart of one or more named series over a shared x axis."""
    path = Path(path)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"]
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    xs = np.arange(max(y.size for y in ys)) if x is None else np.asarray(x, dtype=float)
    lo = min(float(y.min()) for y in ys)
    hi = max(float(y.max()) for y in ys)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W/2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{_PAD}" y1="{_H-_PAD}" x2="{_W-_PAD}" y2="{_H-_PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H-_PAD}" stroke="black"/>',
        f'<text x="{_PAD}" y="{_H-_PAD+16}" font-size="10">{xs.min():.3g}</text>',
        f'<text x="{_W-_PAD}" y="{_H-_PAD+16}" text-anchor="end" font-size="10">{xs.max():.3g}</text>',
        f'<text x="{_PAD-4}" y="{_H-_PAD}" text-anchor="end" font-size="10">{lo:.3g}</text>',
        f'<text x="{_PAD-4}" y="{_PAD+4}" text-anchor="end" font-size="10">{hi:.3g}</text>',
    ]
    for i, (name, y) in enumerate(series.items()):
        y = np.asarray(y, dtype=float)
        xv = xs[: y.size]
        pts = " ".join(
            f"{_scale(a, xs.min(), xs.max(), _PAD, _W-_PAD):.1f},"
            f"{_scale(b, lo, hi, _H-_PAD, _PAD):.1f}"
            for a, b in zip(xv, y)
        )
        color = colors[i % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{_W-_PAD-4}" y="{_PAD + 14*(i+1)}" text-anchor="end" '
            f'font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts))
    return path


def heatmap(matrix: np.ndarray, path, title: str = "") -> Path:
    """Grid heat map on a log-ish intensity scale (white = 0)."""
    path = Path(path)
    m = np.asarray(matrix, dtype=float)
    top = m.max() if m.max() > 0 else 1.0
    intensity = np.log1p(m) / np.log1p(top)
    n_rows, n_cols = m.shape
    cell = min((_W - 2 * _PAD) / n_cols, (_H - 2 * _PAD) / n_rows)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W/2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for i in range(n_rows):
        for j in range(n_cols):
            v = intensity[i, j]
            if v <= 0:
                continue
            shade = int(255 * (1.0 - v))
            parts.append(
                f'<rect x="{_PAD + j*cell:.1f}" y="{_PAD + i*cell:.1f}" '
                f'width="{cell:.1f}" height="{cell:.1f}" '
                f'fill="rgb(255,{shade},{shade})"/>'
            )
    parts.append("</svg>")
    path.write_text("\n".join(parts))
    return path
