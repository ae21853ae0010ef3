"""Static SVG heatmaps of loading matrices on a diverging scale centred at 0."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

__all__ = ["diverging_color", "heatmap_svg", "write_heatmap"]

_NEG = np.array([33, 102, 172])     # blue
_MID = np.array([247, 247, 247])
_POS = np.array([178, 24, 43])      # red


def diverging_color(v: float, vmax: float) -> str:
    """Hex colour for ``v`` on a blue-white-red scale spanning [-vmax, vmax]."""
    if vmax <= 0 or not np.isfinite(v):
        t = 0.0
    else:
        t = float(np.clip(v / vmax, -1.0, 1.0))
    end = _POS if t >= 0 else _NEG
    rgb = np.rint(_MID + abs(t) * (end - _MID)).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def heatmap_svg(M, title: str | None = None, cell: float | None = None, vmax: float | None = None,
                row_order=None, col_labels=None) -> str:
    M = np.atleast_2d(np.asarray(M, float))
    if row_order is not None:
        M = M[np.asarray(row_order)]
    J, K = M.shape
    if cell is None:
        cell = max(2.0, min(24.0, 600.0 / max(J, 1)))
    cw = max(cell, 18.0)
    vmax = float(np.max(np.abs(M), initial=0.0)) if vmax is None else float(vmax)
    top = 24.0 if title else 6.0
    left, bottom = 6.0, 18.0
    width = left + K * cw + 80.0
    height = top + J * cell + bottom
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
           f'viewBox="0 0 {width:.1f} {height:.1f}">',
           f'<rect width="100%" height="100%" fill="white"/>']
    if title:
        out.append(f'<text x="{left}" y="16" font-family="sans-serif" font-size="13">{escape(title)}</text>')
    for j in range(J):
        y = top + j * cell
        for k in range(K):
            out.append(f'<rect x="{left + k * cw:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{cell:.2f}" '
                       f'fill="{diverging_color(M[j, k], vmax)}"/>')
    labels = col_labels if col_labels is not None else [str(k + 1) for k in range(K)]
    for k, lab in enumerate(labels):
        out.append(f'<text x="{left + (k + 0.5) * cw:.2f}" y="{top + J * cell + 13:.2f}" font-family="sans-serif" '
                   f'font-size="10" text-anchor="middle">{escape(str(lab))}</text>')
    # colour bar
    bx = left + K * cw + 16
    nb = 21
    bh = (J * cell) / nb
    for i in range(nb):
        v = vmax * (1 - 2 * i / (nb - 1))
        out.append(f'<rect x="{bx:.2f}" y="{top + i * bh:.2f}" width="12" height="{bh:.2f}" '
                   f'fill="{diverging_color(v, vmax)}"/>')
    for v, yy in ((vmax, top + 8), (0.0, top + J * cell / 2 + 4), (-vmax, top + J * cell)):
        out.append(f'<text x="{bx + 16:.2f}" y="{yy:.2f}" font-family="sans-serif" font-size="10">{v:.2g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_heatmap(path, M, **kw):
    with open(path, "w") as fh:
        fh.write(heatmap_svg(M, **kw))
