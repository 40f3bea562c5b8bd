"""Minimal SVG writer for eigenvalue branch diagrams."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .perturb import Branch

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")


def branches_svg(branches: Sequence[Branch], title: str = "", width: int = 640, height: int = 480) -> str:
    """Polylines of value against eps, one per branch; uncertain branches are dashed."""
    pad = 50
    if branches:
        eps = np.concatenate([b.eps_grid for b in branches])
        vals = np.concatenate([b.values for b in branches])
        x0, x1 = float(eps.min()), float(eps.max())
        y0, y1 = float(vals.min()), float(vals.max())
    else:
        x0, x1, y0, y1 = -1.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def sx(x: float) -> float:
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y: float) -> float:
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">eps [{x0:.3g}, {x1:.3g}]</text>',
        f'<text x="12" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 12 {height / 2:.1f})" '
        f'text-anchor="middle">eigenvalue [{y0:.4g}, {y1:.4g}]</text>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if x0 <= 0 <= x1:
        out.append(f'<line x1="{sx(0):.2f}" y1="{pad}" x2="{sx(0):.2f}" y2="{height - pad}" stroke="#bbb" stroke-dasharray="2,3"/>')
    for b in branches:
        pts = " ".join(f"{sx(e):.2f},{sy(v):.2f}" for e, v in zip(b.eps_grid, b.values))
        color = PALETTE[b.origin_cluster % len(PALETTE)]
        dash = ' stroke-dasharray="5,3"' if b.uncertain else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
