"""SVG rendering of maps, initializations, candidates and trajectories."""

import numpy as np

_PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e",
            "#17becf", "#e377c2", "#8c564b"]


def _path(points, stroke, width, opacity=1.0):
    coords = " L ".join(f"{x:.3f},{y:.3f}" for x, y in points)
    return (f'<path d="M {coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}"/>')


def render_svg(vmap, scene=None, trajectories=None, candidates=None) -> str:
    """Compose the overlay: lanes black, candidates thin, trajectories bold,
    init poses as dots with heading ticks. Returns the SVG document."""
    b = vmap.bounds
    pad = 0.05 * max(b[2] - b[0], b[3] - b[1])
    w, h = b[2] - b[0] + 2 * pad, b[3] - b[1] + 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.3f} {h:.3f}">',
        # flip y so north is up
        f'<g transform="translate({pad - b[0]:.3f},{b[3] + pad:.3f}) scale(1,-1)">',
        f'<rect x="{b[0]:.3f}" y="{b[1]:.3f}" width="{b[2] - b[0]:.3f}" '
        f'height="{b[3] - b[1]:.3f}" fill="white"/>',
    ]
    lane_w = max(w, h) / 400.0
    for lane in vmap.lanes:
        parts.append(_path(lane.points, "black", lane_w))
    if candidates is not None:
        for i, cands in enumerate(candidates):
            color = _PALETTE[i % len(_PALETTE)]
            for xy in cands.xy:
                parts.append(_path(xy, color, 0.4 * lane_w, opacity=0.35))
    if trajectories is not None:
        for i, xy in enumerate(np.asarray(trajectories)):
            parts.append(_path(xy, _PALETTE[i % len(_PALETTE)], 2.5 * lane_w))
    if scene is not None:
        tick = 4.0 * lane_w
        for i, a in enumerate(scene.agents):
            color = _PALETTE[i % len(_PALETTE)]
            tx, ty = a.x + tick * np.cos(a.theta), a.y + tick * np.sin(a.theta)
            parts.append(f'<circle cx="{a.x:.3f}" cy="{a.y:.3f}" '
                         f'r="{1.5 * lane_w:.3f}" fill="{color}"/>')
            parts.append(f'<line x1="{a.x:.3f}" y1="{a.y:.3f}" x2="{tx:.3f}" '
                         f'y2="{ty:.3f}" stroke="{color}" '
                         f'stroke-width="{lane_w:.3f}"/>')
    parts.append("</g></svg>")
    return "\n".join(parts)


def save_svg(svg: str, path):
    with open(path, "w") as fh:
        fh.write(svg)
