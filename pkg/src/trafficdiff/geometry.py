"""Vectorized maps: arc-length parameterized lanes and Frenet-frame transforms.

A lane is an ordered polyline with per-vertex arc length, heading and a
discrete curvature estimate. Frenet coordinates (s, d) are measured along a
reference lane: s is arc length of the nearest point on the polyline, d is
the signed lateral offset with d > 0 to the left of the travel direction.
"""

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateLane


@dataclass(frozen=True)
class FrenetCoord:
    """Path-relative coordinate: arc length s and signed lateral offset d."""

    s: float
    d: float


@dataclass(frozen=True)
class Lane:
    points: np.ndarray     # (K, 2) vertex positions [m]
    cum_s: np.ndarray      # (K,) cumulative arc length, cum_s[0] == 0
    heading: np.ndarray    # (K,) segment direction at each vertex [rad]
    curvature: np.ndarray  # (K,) signed discrete curvature [1/m]

    @property
    def length(self) -> float:
        return float(self.cum_s[-1])


@dataclass(frozen=True)
class VectorMap:
    lanes: list
    bounds: np.ndarray  # [xmin, ymin, xmax, ymax]


class LaneMatch(NamedTuple):
    index: int
    lane: Lane
    distance: float


def _discrete_curvature(pts):
    """Signed three-point circumscribed-circle curvature, endpoints copied."""
    k = np.zeros(len(pts))
    if len(pts) < 3:
        return k
    a, b, c = pts[:-2], pts[1:-1], pts[2:]
    ab = b - a
    ac = c - a
    bc = c - b
    cross = ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0]
    denom = np.hypot(*ab.T) * np.hypot(*bc.T) * np.hypot(*ac.T)
    k[1:-1] = np.where(denom > 0.0, 2.0 * cross / np.where(denom > 0.0, denom, 1.0), 0.0)
    k[0] = k[1]
    k[-1] = k[-2]
    return k


def arclength_parameterize(points) -> Lane:
    """Build a Lane from a polyline of >= 2 distinct points.

    Headings use the forward difference (the last vertex copies its
    predecessor); curvature is a discrete three-point estimate with the
    endpoints copying their neighbors.
    """
    pts = np.array(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise DegenerateLane("lane needs at least 2 planar points")
    if not np.all(np.isfinite(pts)):
        raise DegenerateLane("lane points must be finite")
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(seg_len == 0.0):
        raise DegenerateLane("duplicate consecutive lane points")
    cum_s = np.concatenate([[0.0], np.cumsum(seg_len)])
    heading = np.arctan2(seg[:, 1], seg[:, 0])
    heading = np.append(heading, heading[-1])
    return Lane(pts, cum_s, heading, _discrete_curvature(pts))


def _project_to_segments(p, lane):
    """Per-segment clamped orthogonal projection of p.

    Returns (foot points, clamp parameter t in [0,1], distances) per segment.
    """
    a = lane.points[:-1]
    b = lane.points[1:]
    v = b - a
    t = ((p - a) * v).sum(axis=1) / (v * v).sum(axis=1)
    t = np.clip(t, 0.0, 1.0)
    foot = a + t[:, None] * v
    diff = p - foot
    return foot, t, np.hypot(diff[:, 0], diff[:, 1])


def polyline_distance(p, lane: Lane) -> float:
    """Minimum Euclidean distance from p to the lane polyline."""
    _, _, dist = _project_to_segments(np.asarray(p, dtype=float), lane)
    return float(dist.min())


def cart_to_frenet(p, lane: Lane) -> FrenetCoord:
    """Project a point onto the lane.

    s is the arc length of the closest polyline point (per-segment orthogonal
    projection clamped to segment ends, ties resolved toward the smallest s);
    d is the lateral component of the residual, positive left of travel.
    """
    p = np.asarray(p, dtype=float)
    foot, t, dist = _project_to_segments(p, lane)
    i = int(np.argmin(dist))  # argmin takes the first minimum -> smallest s
    seg = lane.points[i + 1] - lane.points[i]
    seg_len = lane.cum_s[i + 1] - lane.cum_s[i]
    u = seg / seg_len
    diff = p - foot[i]
    d = u[0] * diff[1] - u[1] * diff[0]
    s = lane.cum_s[i] + t[i] * seg_len
    return FrenetCoord(float(s), float(d))


def frenet_to_cart(fc: FrenetCoord, lane: Lane) -> np.ndarray:
    """Map (s, d) back to Cartesian coordinates.

    The lateral offset is applied along the left normal of the segment
    containing s, which makes this the exact inverse of `cart_to_frenet`
    for interior projections. s beyond the lane extrapolates along the
    end headings.
    """
    s, d = float(fc.s), float(fc.d)
    if s <= 0.0:
        theta = lane.heading[0]
        base = lane.points[0] + s * np.array([np.cos(theta), np.sin(theta)])
    elif s >= lane.length:
        theta = lane.heading[-1]
        base = lane.points[-1] + (s - lane.length) * np.array([np.cos(theta), np.sin(theta)])
    else:
        i = int(np.searchsorted(lane.cum_s, s, side="right")) - 1
        i = min(max(i, 0), len(lane.points) - 2)
        theta = lane.heading[i]
        frac = (s - lane.cum_s[i]) / (lane.cum_s[i + 1] - lane.cum_s[i])
        base = lane.points[i] + frac * (lane.points[i + 1] - lane.points[i])
    normal = np.array([-np.sin(theta), np.cos(theta)])
    return base + d * normal


def heading_at(lane: Lane, s: float) -> float:
    """Lane heading at arc length s (segment heading; end headings outside)."""
    if s <= 0.0:
        return float(lane.heading[0])
    if s >= lane.length:
        return float(lane.heading[-1])
    i = int(np.searchsorted(lane.cum_s, s, side="right")) - 1
    return float(lane.heading[min(max(i, 0), len(lane.points) - 2)])


def nearest_lanes(p, vmap: VectorMap, radius: float):
    """All lanes within `radius` of p, as LaneMatch tuples sorted by distance.

    Ties are ordered by lane index. Returns an empty list when nothing is in
    range.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    p = np.asarray(p, dtype=float)
    matches = [
        LaneMatch(i, lane, polyline_distance(p, lane))
        for i, lane in enumerate(vmap.lanes)
    ]
    matches = [m for m in matches if m.distance <= radius]
    matches.sort(key=lambda m: (m.distance, m.index))
    return matches


def _bounds_of(lanes):
    pts = np.concatenate([lane.points for lane in lanes], axis=0)
    return np.array([pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()])


def make_map(polylines, bounds=None) -> VectorMap:
    """Build a VectorMap from raw polylines; bounds computed when omitted."""
    lanes = [arclength_parameterize(pl) for pl in polylines]
    if bounds is None:
        b = _bounds_of(lanes)
    else:
        b = np.asarray(bounds, dtype=float)
        auto = _bounds_of(lanes)
        if auto[0] < b[0] or auto[1] < b[1] or auto[2] > b[2] or auto[3] > b[3]:
            raise DegenerateLane("bounds do not contain all lane points")
    return VectorMap(lanes, b)


def map_to_dict(vmap: VectorMap) -> dict:
    return {
        "lanes": [{"points": lane.points.tolist()} for lane in vmap.lanes],
        "bounds": vmap.bounds.tolist(),
    }


def map_from_dict(doc: dict) -> VectorMap:
    """Load the JSON interchange form; derived lane fields are recomputed."""
    return make_map([l["points"] for l in doc["lanes"]], doc.get("bounds"))


def save_map(vmap: VectorMap, path):
    with open(path, "w") as fh:
        json.dump(map_to_dict(vmap), fh)


def load_map(path) -> VectorMap:
    with open(path) as fh:
        return map_from_dict(json.load(fh))
