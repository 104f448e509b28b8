"""Minimal SVG output for covariance heatmaps and error boxplots."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np


def _color(v, vmax):
    # diverging blue-white-red
    t = 0.0 if vmax == 0 else float(np.clip(v / vmax, -1.0, 1.0))
    if t >= 0:
        r, g, b = 255, int(255 * (1 - t)), int(255 * (1 - t))
    else:
        r, g, b = int(255 * (1 + t)), int(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(matrix, path, labels: Sequence[str] | None = None, order: Sequence[int] | None = None,
            title: str = "", cell: int = 14) -> None:
    m = np.asarray(matrix, dtype=float)
    if order is not None:
        m = m[np.ix_(order, order)]
        if labels is not None:
            labels = [labels[i] for i in order]
    n = m.shape[0]
    margin = 60 if labels is not None else 10
    top = 24 if title else 4
    size = margin + n * cell + 10
    vmax = float(np.max(np.abs(m))) if m.size else 0.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + top}" font-size="9">']
    if title:
        out.append(f'<text x="{margin}" y="14" font-size="12">{escape(title)}</text>')
    for i in range(n):
        for j in range(n):
            out.append(
                f'<rect x="{margin + j * cell}" y="{top + margin + i * cell}" width="{cell}" height="{cell}" '
                f'fill="{_color(m[i, j], vmax)}"/>'
            )
    if labels is not None:
        for i, lab in enumerate(labels):
            out.append(f'<text x="2" y="{top + margin + i * cell + cell - 3}">{escape(str(lab))}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def boxplot(groups: Mapping[str, Sequence[float]], path, threshold: float | None = None, title: str = "",
            width: int = 480, height: int = 300) -> None:
    names = list(groups)
    vals = [np.asarray(groups[k], dtype=float) for k in names]
    hi = max([float(v.max()) for v in vals if v.size] + [threshold or 0.0, 1e-12]) * 1.05
    left, bottom, top = 50, 30, 30
    plot_h = height - top - bottom
    slot = (width - left - 10) / max(len(names), 1)

    def y(v):
        return top + plot_h * (1 - v / hi)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-size="10">']
    if title:
        out.append(f'<text x="{left}" y="16" font-size="12">{escape(title)}</text>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        v = hi * frac
        out.append(f'<text x="4" y="{y(v) + 3:.1f}">{v:.2f}</text>')
    for i, (name, v) in enumerate(zip(names, vals)):
        cx = left + slot * (i + 0.5)
        if v.size:
            q0, q1, q2, q3, q4 = np.percentile(v, [0, 25, 50, 75, 100])
            w = slot * 0.3
            out.append(f'<line x1="{cx:.1f}" y1="{y(q0):.1f}" x2="{cx:.1f}" y2="{y(q4):.1f}" stroke="black"/>')
            out.append(f'<rect x="{cx - w:.1f}" y="{y(q3):.1f}" width="{2 * w:.1f}" '
                       f'height="{max(y(q1) - y(q3), 0.5):.1f}" fill="#ccddee" stroke="black"/>')
            out.append(f'<line x1="{cx - w:.1f}" y1="{y(q2):.1f}" x2="{cx + w:.1f}" y2="{y(q2):.1f}" '
                       f'stroke="black" stroke-width="2"/>')
        out.append(f'<text x="{cx - 10:.1f}" y="{height - 10}">{escape(str(name))}</text>')
    if threshold is not None:
        out.append(f'<line x1="{left}" y1="{y(threshold):.1f}" x2="{width - 10}" y2="{y(threshold):.1f}" '
                   f'stroke="red" stroke-dasharray="4,3"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
