"""Deterministic SVG drawings of planar embeddings."""

from __future__ import annotations

import numpy as np

RAMP_LOW = (40, 80, 200)
RAMP_HIGH = (220, 30, 30)


def ramp_color(t: float) -> str:
    """Linear blue-to-red ramp for ``t`` in ``[0, 1]``."""
    t = min(max(float(t), 0.0), 1.0)
    rgb = [round(a + (b - a) * t) for a, b in zip(RAMP_LOW, RAMP_HIGH)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _f(v: float) -> str:
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def export_svg(coords, edges, errors=None, title: str | None = None, margin: float = 0.05) -> str:
    """One ``<line>`` per rod; optional colour ramp by per-rod error.

    The drawing flips ``y`` so the layout appears with its usual orientation.
    The viewBox is the bounding box grown by ``margin`` of the larger side on
    every edge. With ``errors`` the largest error gets the high end of the
    ramp and zero error the low end.
    """
    xy = np.asarray(coords, dtype=float).reshape(-1, 2)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if not np.all(np.isfinite(xy)):
        raise ValueError("coordinates must be finite")
    pts = np.column_stack([xy[:, 0], -xy[:, 1]])
    lo = pts.min(axis=0) if len(pts) else np.zeros(2)
    hi = pts.max(axis=0) if len(pts) else np.ones(2)
    size = max(float(np.max(hi - lo)), 1e-12)
    pad = margin * size
    x0, y0 = lo - pad
    w, h = (hi - lo) + 2 * pad
    stroke = 0.003 * size
    if errors is not None:
        err = np.abs(np.asarray(errors, dtype=float))
        top = float(err.max()) if len(err) else 0.0
        colors = [ramp_color(v / top if top > 0 else 0.0) for v in err]
    else:
        colors = ["#000000"] * len(e)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_f(x0)} {_f(y0)} {_f(w)} {_f(h)}">',
    ]
    if title:
        safe = title.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        out.append(f"<title>{safe}</title>")
    out.append(f'<g stroke-width="{_f(stroke)}" stroke-linecap="round">')
    for (i, j), c in zip(e, colors):
        a, b = pts[i], pts[j]
        out.append(f'<line x1="{_f(a[0])}" y1="{_f(a[1])}" x2="{_f(b[0])}" y2="{_f(b[1])}" stroke="{c}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
