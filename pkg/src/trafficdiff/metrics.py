"""Evaluation metrics: common-sense rates, JSD fidelity, road compliance.

Agents are modeled as discs with per-type radii for collision checks;
off-road means farther than a threshold (default 4 m) from every lane
centerline. Distributional metrics compare histograms of per-agent
behavioral statistics with the base-2 Jensen-Shannon divergence.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EdgeMismatch, NoReferenceLane, ShapeMismatch
from .geometry import VectorMap, cart_to_frenet, heading_at, polyline_distance
from .scene import Scene, wrap_angle

OFFROAD_THRESHOLD = 4.0
MISS_THRESHOLD = 2.0


def default_radius(agent_type) -> float:
    """Disc radius per agent type; one vehicle class at desk scale."""
    return 1.0


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray  # (B+1,) ascending boundaries
    mass: np.ndarray   # (B,) non-negative, sums to 1 for non-empty data

    @classmethod
    def from_samples(cls, samples, edges):
        """Bin samples; out-of-range values are clamped into the end bins."""
        edges = np.asarray(edges, dtype=float)
        samples = np.asarray(samples, dtype=float)
        clipped = np.clip(samples, edges[0], edges[-1])
        counts, _ = np.histogram(clipped, bins=edges)
        total = counts.sum()
        mass = counts / total if total > 0 else np.zeros(len(edges) - 1)
        return cls(edges, mass)


def jsd(p: Histogram, q: Histogram) -> float:
    """Base-2 Jensen-Shannon divergence between two aligned histograms."""
    if not np.array_equal(p.edges, q.edges):
        raise EdgeMismatch("histograms use different bin edges")
    m = (p.mass + q.mass) / 2.0

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return 0.5 * kl(p.mass) + 0.5 * kl(q.mass)


def _radii(types, radius_fn):
    return np.array([radius_fn(int(c)) for c in types], dtype=float)


def _colliding(positions, radii):
    """Boolean per-agent collision flags at one instant."""
    n = positions.shape[0]
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    limit = radii[:, None] + radii[None, :]
    hit = dist < limit
    np.fill_diagonal(hit, False)
    return hit.any(axis=1)


def init_collision_rate(scene: Scene, radius_fn=default_radius) -> float:
    """Fraction of agents overlapping any other agent at the init instant."""
    arr = scene.to_array()
    flags = _colliding(arr[:, :2], _radii(arr[:, 4], radius_fn))
    return float(flags.mean())


def actor_collision_rate(trajs, types, radius_fn=default_radius) -> float:
    """Fraction of agents that collide at any timestep of the horizon."""
    trajs = np.asarray(trajs, dtype=float)
    radii = _radii(types, radius_fn)
    flags = np.zeros(trajs.shape[0], dtype=bool)
    for h in range(trajs.shape[1]):
        flags |= _colliding(trajs[:, h, :], radii)
    return float(flags.mean())


def distance_to_nearest_lane(points, vmap: VectorMap):
    """Per-point distance to the closest lane centerline."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return np.array([
        min(polyline_distance(p, lane) for lane in vmap.lanes) for p in points
    ])


def near_edge(scene: Scene, vmap: VectorMap) -> float:
    """Mean distance from agents to their nearest lane centerline."""
    return float(distance_to_nearest_lane(scene.to_array()[:, :2], vmap).mean())


def init_offroad_rate(scene: Scene, vmap: VectorMap,
                      threshold=OFFROAD_THRESHOLD) -> float:
    dist = distance_to_nearest_lane(scene.to_array()[:, :2], vmap)
    return float((dist > threshold).mean())


def traj_offroad_rate(trajs, vmap: VectorMap, threshold=OFFROAD_THRESHOLD) -> float:
    """Fraction of agents farther than threshold from every lane at any step."""
    trajs = np.asarray(trajs, dtype=float)
    flags = [
        bool((distance_to_nearest_lane(traj, vmap) > threshold).any())
        for traj in trajs
    ]
    return float(np.mean(flags))


def _nearest_lane(vmap, p):
    if not vmap.lanes:
        raise NoReferenceLane("map has no lanes")
    dists = [polyline_distance(p, lane) for lane in vmap.lanes]
    return vmap.lanes[int(np.argmin(dists))]


def behavioral_stats(scene: Scene, vmap: VectorMap) -> dict:
    """Per-agent statistics feeding the JSD histograms.

    Returns nearest_dist and local_density (None when too few agents),
    lat_dev, ang_dev in [0, pi], and speed.
    """
    arr = scene.to_array()
    n = arr.shape[0]
    out = {"nearest_dist": None, "local_density": None}
    if n >= 2:
        diff = arr[:, None, :2] - arr[None, :, :2]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, np.inf)
        out["nearest_dist"] = dist.min(axis=1)
        if n >= 6:
            part = np.sort(dist, axis=1)[:, :5]
            out["local_density"] = part.mean(axis=1)
    lat, ang = [], []
    for row in arr:
        lane = _nearest_lane(vmap, row[:2])
        fc = cart_to_frenet(row[:2], lane)
        lat.append(abs(fc.d))
        ang.append(abs(wrap_angle(row[2] - heading_at(lane, fc.s))))
    out["lat_dev"] = np.array(lat)
    out["ang_dev"] = np.array(ang)
    out["speed"] = arr[:, 3].copy()
    return out


DEFAULT_HIST_RANGES = {
    "nearest_dist": (0.0, 50.0),
    "local_density": (0.0, 50.0),
    "lat_dev": (0.0, 10.0),
    "ang_dev": (0.0, float(np.pi)),
    "speed": (0.0, 20.0),
}


def histogram_edges(n_bins=20, ranges=None) -> dict:
    ranges = ranges or DEFAULT_HIST_RANGES
    return {k: np.linspace(lo, hi, n_bins + 1) for k, (lo, hi) in ranges.items()}


def behavioral_histograms(scene: Scene, vmap: VectorMap, edges=None) -> dict:
    """Histograms over the per-agent statistics; absent stats map to None."""
    edges = edges or histogram_edges()
    stats = behavioral_stats(scene, vmap)
    return {
        name: (Histogram.from_samples(vals, edges[name]) if vals is not None else None)
        for name, vals in stats.items()
    }


def lateral_deviation(trajs, vmap: VectorMap, inits: Scene):
    """(average, final) |d| to each agent's reference lane from its init."""
    trajs = np.asarray(trajs, dtype=float)
    per_step = np.empty(trajs.shape[:2])
    for i, agent in enumerate(inits.agents):
        lane = _nearest_lane(vmap, agent.position)
        for h in range(trajs.shape[1]):
            per_step[i, h] = abs(cart_to_frenet(trajs[i, h], lane).d)
    return float(per_step.mean()), float(per_step[:, -1].mean())


def ade_fde_mr(pred, gt, miss_threshold=MISS_THRESHOLD):
    """Average/final displacement error and miss rate (per-agent FDE > 2 m)."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    err = np.linalg.norm(pred - gt, axis=-1)
    fde_per_agent = err[:, -1]
    return (float(err.mean()), float(fde_per_agent.mean()),
            float((fde_per_agent > miss_threshold).mean()))
