"""Self-contained SVG emitters for phase portraits and surface heatmaps.

Pure file output with no plotting dependency; figures are data-first (the
CSV artifacts are authoritative) and these renderings exist for quick
visual inspection.
"""

from __future__ import annotations

import numpy as np

from .artifacts import atomic_write_text

__all__ = ["phase_portrait_svg", "heatmap_svg"]

_SIZE = 480
_PAD = 40


def _scale(v, lo, hi, size):
    return _PAD + (v - lo) / (hi - lo) * size


def phase_portrait_svg(path, trajectories, box, title=""):
    """Polyline phase portrait of 2-D trajectories over a box."""
    w = h = _SIZE
    lo_x, lo_y = box.lo
    hi_x, hi_y = box.hi
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2*_PAD}" '
        f'height="{h + 2*_PAD}" viewBox="0 0 {w + 2*_PAD} {h + 2*_PAD}">',
        f'<rect x="{_PAD}" y="{_PAD}" width="{w}" height="{h}" '
        'fill="white" stroke="black"/>',
    ]
    if title:
        parts.append(f'<text x="{_PAD}" y="{_PAD - 10}" font-size="14">{title}</text>')
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
              "#8c564b", "#17becf", "#7f7f7f"]
    for i, traj in enumerate(trajectories):
        states = np.asarray(traj.states if hasattr(traj, "states") else traj)
        keep = (np.abs(states[:, 0]) < 10 * max(abs(lo_x), abs(hi_x))) & \
               (np.abs(states[:, 1]) < 10 * max(abs(lo_y), abs(hi_y)))
        states = states[keep]
        if len(states) < 2:
            continue
        pts = " ".join(
            f"{_scale(s[0], lo_x, hi_x, w):.2f},"
            f"{_scale(hi_y + lo_y - s[1], lo_y, hi_y, h):.2f}"
            for s in states[:: max(1, len(states) // 2000)])
        color = colors[i % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1"/>')
        x0, y0 = states[0]
        parts.append(
            f'<circle cx="{_scale(x0, lo_x, hi_x, w):.2f}" '
            f'cy="{_scale(hi_y + lo_y - y0, lo_y, hi_y, h):.2f}" r="3" '
            f'fill="{color}"/>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")


def _blue_white_red(u):
    u = min(max(u, 0.0), 1.0)
    if u < 0.5:
        f = u / 0.5
        r, g, b = int(255 * f), int(255 * f), 255
    else:
        f = (u - 0.5) / 0.5
        r, g, b = 255, int(255 * (1 - f)), int(255 * (1 - f))
    return f"rgb({r},{g},{b})"


def heatmap_svg(path, xs, ys, values, title=""):
    """Cell-colored heatmap of values sampled on the grid xs x ys."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    Z = np.asarray(values, dtype=float).reshape(len(xs), len(ys))
    w = h = _SIZE
    lo, hi = float(np.nanmin(Z)), float(np.nanmax(Z))
    span = hi - lo if hi > lo else 1.0
    cw = w / len(xs)
    ch = h / len(ys)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2*_PAD}" '
        f'height="{h + 2*_PAD}" viewBox="0 0 {w + 2*_PAD} {h + 2*_PAD}">',
    ]
    if title:
        parts.append(f'<text x="{_PAD}" y="{_PAD - 10}" font-size="14">'
                     f'{title} [{lo:.3g}, {hi:.3g}]</text>')
    for i in range(len(xs)):
        for j in range(len(ys)):
            u = (Z[i, j] - lo) / span
            x = _PAD + i * cw
            y = _PAD + (len(ys) - 1 - j) * ch
            parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw + 0.5:.2f}" '
                         f'height="{ch + 0.5:.2f}" fill="{_blue_white_red(u)}"/>')
    parts.append(f'<rect x="{_PAD}" y="{_PAD}" width="{w}" height="{h}" '
                 'fill="none" stroke="black"/>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")
