"""Minimal SVG scatter of two particle clouds."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, PAD = 480, 480, 48


def scatter_svg(
    clouds: list[tuple[str, str, np.ndarray]],
    xlabel: str = "source 0",
    ylabel: str = "source 1",
    title: str = "",
) -> str:
    """Render ``(label, colour, points[K, 2])`` clouds on shared axes."""
    pts = np.concatenate([c[2] for c in clouds])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    lo, span = lo - 0.05 * span, 1.1 * span

    def sx(v):
        return PAD + (v - lo[0]) / span[0] * (WIDTH - 2 * PAD)

    def sy(v):
        return HEIGHT - PAD - (v - lo[1]) / span[1] * (HEIGHT - 2 * PAD)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv, yv = lo[0] + frac * span[0], lo[1] + frac * span[1]
        out.append(f'<text x="{sx(xv):.1f}" y="{HEIGHT - PAD + 16}" font-size="10" text-anchor="middle">{xv:.2f}</text>')
        out.append(f'<text x="{PAD - 6}" y="{sy(yv):.1f}" font-size="10" text-anchor="end">{yv:.2f}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="14" y="{HEIGHT / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>'
    )
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
    for i, (label, colour, p) in enumerate(clouds):
        out.append(f'<g fill="{colour}" fill-opacity="0.6">')
        out.extend(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5"/>' for x, y in p)
        out.append("</g>")
        ly = PAD + 14 * i
        out.append(f'<circle cx="{WIDTH - PAD - 70}" cy="{ly - 4}" r="4" fill="{colour}"/>')
        out.append(f'<text x="{WIDTH - PAD - 60}" y="{ly}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
