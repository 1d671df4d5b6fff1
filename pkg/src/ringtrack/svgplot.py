"""Top-view SVG of a tracked trajectory: truth, network estimates, filter track."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

SERIES = (
    ("truth", "ground truth", "#222222"),
    ("nn", "neural net", "#1f77b4"),
    ("pf", "particle filter", "#d62728"),
)


def _bounds(series: dict[str, np.ndarray]) -> tuple[float, float, float, float]:
    pts = [p for p in series.values() if len(p)] + [np.zeros((1, 2))]
    allp = np.concatenate(pts)
    lo = allp.min(axis=0)
    hi = allp.max(axis=0)
    span = max(float(np.max(hi - lo)), 1.0)
    pad = 0.08 * span
    return lo[0] - pad, lo[1] - pad, span + 2 * pad, span + 2 * pad


def render_svg(series: dict[str, np.ndarray], size: int = 640, title: str = "human trajectory (top view)") -> str:
    """``series`` maps truth/nn/pf to (n, 2) arrays of world x, y in meters.

    Each series becomes one polyline with exactly one vertex per point; a
    series with a single point also gets a circle marker so it stays visible.
    """
    x0, y0, w, h = _bounds(series)
    scale = size / w

    def px(p):
        # SVG y grows downward; flip so +y world points up.
        return (p[0] - x0) * scale, size - (p[1] - y0) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 40}" '
        f'viewBox="0 0 {size} {size + 40}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{size}" height="{size + 40}" fill="white"/>',
    ]
    ox, oy = px((0.0, 0.0))
    out.append(f'<g id="robot"><rect x="{ox - 6:.2f}" y="{oy - 6:.2f}" width="12" height="12" fill="#555555"/>'
               f'<text x="{ox + 9:.2f}" y="{oy - 9:.2f}" font-size="12" font-family="sans-serif">robot (0,0)</text></g>')
    for key, label, colour in SERIES:
        pts = series.get(key)
        if pts is None:
            continue
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        coords = " ".join("{:.2f},{:.2f}".format(*px(p)) for p in pts)
        out.append(f'<polyline class="series" data-series="{key}" fill="none" stroke="{colour}" '
                   f'stroke-width="1.5" points="{coords}"/>')
        if len(pts) == 1:
            cx, cy = px(pts[0])
            out.append(f'<circle class="marker" data-series="{key}" cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{colour}"/>')
    for i, (key, label, colour) in enumerate(SERIES):
        lx = 10 + i * 160
        out.append(f'<line x1="{lx}" y1="{size + 20}" x2="{lx + 24}" y2="{size + 20}" stroke="{colour}" stroke-width="3"/>'
                   f'<text x="{lx + 30}" y="{size + 24}" font-size="13" font-family="sans-serif">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
