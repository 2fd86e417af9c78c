"""Parametric map perturbations producing out-of-distribution lane geometry.

Lanes are re-traced by arc length: up to the pivot they are unchanged;
beyond it the heading picks up an extra rotation that grows with arc length
(turn), alternates sign at a second pivot (double_turn), or the points are
displaced laterally by a sine wave (ripple). Turn-style perturbations are
integrated at unit speed, so per-lane arc length is preserved.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidPerturbation, NoReferenceLane
from .geometry import (VectorMap, arclength_parameterize, cart_to_frenet,
                       frenet_to_cart, heading_at, make_map, polyline_distance)
from .scene import AgentInit, Scene, wrap_angle

KINDS = ("identity", "turn", "double_turn", "ripple")
RESAMPLE_SPACING = 1.0  # bending changes point density; 1 m keeps curvature stable


@dataclass(frozen=True)
class Perturbation:
    kind: str
    pivot_s: float = 0.0
    curvature: float = 0.0
    amplitude: float = 0.0
    wavelength: float = 0.0

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidPerturbation(f"unknown kind {self.kind!r}")
        if not np.isfinite([self.pivot_s, self.curvature, self.amplitude,
                            self.wavelength]).all():
            raise InvalidPerturbation("parameters must be finite")
        if self.kind == "ripple" and self.wavelength <= 0.0:
            raise InvalidPerturbation("ripple needs a positive wavelength")


def _sample_grid(length):
    grid = np.arange(0.0, length, RESAMPLE_SPACING)
    if length - grid[-1] > 1e-9:
        grid = np.append(grid, length)
    return grid


def _point_at(lane, s):
    """Position on the original polyline at arc length s (s within range)."""
    i = int(np.searchsorted(lane.cum_s, s, side="right")) - 1
    i = min(max(i, 0), len(lane.points) - 2)
    frac = (s - lane.cum_s[i]) / (lane.cum_s[i + 1] - lane.cum_s[i])
    return lane.points[i] + frac * (lane.points[i + 1] - lane.points[i])


def _added_rotation(s, p: Perturbation, length):
    """Extra heading rotation at arc length s for turn/double_turn."""
    if s <= p.pivot_s:
        return 0.0
    if p.kind == "turn":
        return p.curvature * (s - p.pivot_s)
    pivot2 = p.pivot_s + 0.5 * (length - p.pivot_s)
    if s <= pivot2:
        return p.curvature * (s - p.pivot_s)
    return p.curvature * (pivot2 - p.pivot_s) - p.curvature * (s - pivot2)


def _trace_bent(lane, p: Perturbation):
    """Re-trace the lane at unit speed with the added heading rotation.

    The base heading is piecewise constant between original vertices, so each
    integration interval beyond the pivot is an exact circular arc.
    """
    length = lane.length
    grid = _sample_grid(length)
    pivot = float(np.clip(p.pivot_s, 0.0, length))
    pivot2 = p.pivot_s + 0.5 * (length - p.pivot_s)
    breaks = np.unique(np.concatenate([
        lane.cum_s, grid, [pivot, float(np.clip(pivot2, 0.0, length))]]))
    pos = lane.points[0].astype(float).copy()
    positions = {float(breaks[0]): pos.copy()}
    for u1, u2 in zip(breaks[:-1], breaks[1:]):
        if u2 - u1 >= 1e-12:
            if u2 <= pivot:
                pos = _point_at(lane, u2)  # untouched region keeps its geometry
            else:
                theta = heading_at(lane, 0.5 * (u1 + u2))
                slope = p.curvature if (p.kind == "turn" or u2 <= pivot2) \
                    else -p.curvature
                phi1 = theta + _added_rotation(u1, p, length)
                phi2 = theta + _added_rotation(u2, p, length)
                pos = pos + np.array([
                    (np.sin(phi2) - np.sin(phi1)) / slope,
                    -(np.cos(phi2) - np.cos(phi1)) / slope,
                ])
        positions[float(u2)] = pos.copy()
    return np.array([positions[float(s)] for s in grid])


def _trace_ripple(lane, p: Perturbation):
    grid = _sample_grid(lane.length)
    pts = np.array([_point_at(lane, s) for s in grid])
    for j, s in enumerate(grid):
        if s <= p.pivot_s:
            continue
        theta = heading_at(lane, s)
        offset = p.amplitude * np.sin(2.0 * np.pi * (s - p.pivot_s) / p.wavelength)
        pts[j] += offset * np.array([-np.sin(theta), np.cos(theta)])
    return pts


def _dedupe(pts):
    keep = [0]
    for j in range(1, len(pts)):
        if np.hypot(*(pts[j] - pts[keep[-1]])) > 1e-12:
            keep.append(j)
    return pts[keep]


def perturb_map(vmap: VectorMap, p: Perturbation) -> VectorMap:
    """Apply the perturbation to every lane; lane order is preserved."""
    p.validate()
    if p.kind == "identity":
        return VectorMap(list(vmap.lanes), vmap.bounds.copy())
    new_lanes = []
    for lane in vmap.lanes:
        if p.kind in ("turn", "double_turn"):
            if abs(p.curvature) < 1e-15 or p.pivot_s >= lane.length:
                new_lanes.append(lane.points.copy())
                continue
            new_lanes.append(_dedupe(_trace_bent(lane, p)))
        else:
            if abs(p.amplitude) < 1e-15:
                new_lanes.append(lane.points.copy())
                continue
            new_lanes.append(_dedupe(_trace_ripple(lane, p)))
    return make_map(new_lanes)


def remap_agents(scene: Scene, original: VectorMap, perturbed: VectorMap) -> Scene:
    """Carry agents onto the perturbed map preserving (s, d) and the
    angular deviation from their reference lane."""
    if not original.lanes:
        raise NoReferenceLane("original map has no lanes")
    agents = []
    for a in scene.agents:
        dists = [polyline_distance(a.position, lane) for lane in original.lanes]
        idx = int(np.argmin(dists))
        fc = cart_to_frenet(a.position, original.lanes[idx])
        ang_dev = wrap_angle(a.theta - heading_at(original.lanes[idx], fc.s))
        lane_p = perturbed.lanes[idx]
        pos = frenet_to_cart(fc, lane_p)
        theta = wrap_angle(heading_at(lane_p, fc.s) + ang_dev)
        agents.append(AgentInit(float(pos[0]), float(pos[1]), float(theta), a.v, a.c))
    return Scene(agents, scene.map_ref)
