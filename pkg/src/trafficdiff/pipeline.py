"""End-to-end orchestration: two-stage sampling and metric aggregation.

Stage A samples agent initializations from the init model, stage B builds
Frenet candidates from the sampled poses, stage C samples latent
trajectories conditioned on them. Evaluation pools the per-agent metrics
over all scenes and, when a ground-truth set is given, adds the JSD and
displacement comparisons.
"""

import json

import numpy as np

from . import metrics
from .codec import TrajectoryPca, to_local_frame
from .config import Config, config_dict
from .frenet import candidates_or_fallback
from .scene import Scenario, Scene

_JSD_KEYS = {
    "nearest_dist": "jsd_near_dist",
    "local_density": "jsd_local_density",
    "lat_dev": "jsd_lat_dev",
    "ang_dev": "jsd_ang_dev",
    "speed": "jsd_speed",
}


def fit_codec(scenarios, n_components=10) -> TrajectoryPca:
    """Fit the PCA codec on all local-frame ground-truth trajectories."""
    locals_all = np.concatenate([
        np.stack([to_local_frame(sc.trajectories[i], a)
                  for i, a in enumerate(sc.scene.agents)])
        for sc in scenarios
    ])
    return TrajectoryPca(n_components=n_components).fit(locals_all)


def scene_candidates(scene, vmap, cfg: Config):
    """Per-agent candidate sets for one scene under the config grids."""
    return [
        candidates_or_fallback(a, vmap, cfg.v_grid, cfg.d_grid, cfg.horizon,
                               cfg.dt, cfg.lane_radius)
        for a in scene.agents
    ]


def generate_scenario(vmap, n_agents, init_model, traj_model, seed=0,
                      use_guidance=False, cfg=None, map_ref=0):
    """Run stages A -> B -> C on one map; returns (Scenario, candidates)."""
    cfg = cfg or Config()
    scene = init_model.sample(vmap, n_agents, seed=seed, map_ref=map_ref)
    candidates = scene_candidates(scene, vmap, cfg)
    scenario = traj_model.sample(scene, vmap, seed=seed + 1,
                                 use_guidance=use_guidance,
                                 candidates=candidates)
    return scenario, candidates


def uniform_baseline(vmap, n_agents, rng, speed_range=(0.0, 15.0)) -> Scene:
    """Uniform-random placement over the map bounds (the naive baseline)."""
    b = vmap.bounds
    xy = rng.uniform(b[:2], b[2:], size=(n_agents, 2))
    theta = rng.uniform(-np.pi, np.pi, size=n_agents)
    v = rng.uniform(*speed_range, size=n_agents)
    arr = np.column_stack([xy, theta, v, np.zeros(n_agents)])
    return Scene.from_array(arr)


def _pooled_stats(scenarios, maps):
    pools = {k: [] for k in _JSD_KEYS}
    for sc in scenarios:
        stats = metrics.behavioral_stats(sc.scene, maps[sc.scene.map_ref])
        for k in pools:
            if stats[k] is not None:
                pools[k].append(stats[k])
    return {k: (np.concatenate(v) if v else None) for k, v in pools.items()}


def _has_trajs(sc):
    return sc.trajectories is not None and np.asarray(sc.trajectories).size > 0


def evaluate(scenarios, maps, gt=None, gt_maps=None, cfg=None) -> dict:
    """Aggregate every metric over the scenario set into a flat report."""
    cfg = cfg or Config()
    gt_maps = maps if gt_maps is None else gt_maps
    radius_fn = lambda c: cfg.collision_radius
    report = {}
    weights, collision, offroad, edge = [], [], [], []
    for sc in scenarios:
        n = len(sc.scene)
        vmap = maps[sc.scene.map_ref]
        weights.append(n)
        collision.append(metrics.init_collision_rate(sc.scene, radius_fn) * n)
        offroad.append(metrics.init_offroad_rate(sc.scene, vmap, cfg.offroad_threshold) * n)
        edge.append(metrics.near_edge(sc.scene, vmap) * n)
    total = float(sum(weights))
    report["collision_rate"] = sum(collision) / total
    report["offroad_rate"] = sum(offroad) / total
    report["near_edge"] = sum(edge) / total

    with_trajs = [sc for sc in scenarios if _has_trajs(sc)]
    if with_trajs:
        w, cr, orr, avg_d, fin_d = [], [], [], [], []
        for sc in with_trajs:
            n = len(sc.scene)
            vmap = maps[sc.scene.map_ref]
            types = sc.scene.to_array()[:, 4]
            w.append(n)
            cr.append(metrics.actor_collision_rate(sc.trajectories, types, radius_fn) * n)
            orr.append(metrics.traj_offroad_rate(sc.trajectories, vmap,
                                                 cfg.offroad_threshold) * n)
            a, f = metrics.lateral_deviation(sc.trajectories, vmap, sc.scene)
            avg_d.append(a * n)
            fin_d.append(f * n)
        tw = float(sum(w))
        report["actor_cr"] = sum(cr) / tw
        report["traj_offroad_rate"] = sum(orr) / tw
        report["avg_lat_dev"] = sum(avg_d) / tw
        report["final_lat_dev"] = sum(fin_d) / tw

    edges = metrics.histogram_edges(cfg.hist_bins)
    gen_stats = _pooled_stats(scenarios, maps)
    report["histograms"] = {
        k: {"edges": edges[k].tolist(),
            "mass": metrics.Histogram.from_samples(v, edges[k]).mass.tolist()}
        for k, v in gen_stats.items() if v is not None
    }

    if gt is not None:
        gt_stats = _pooled_stats(gt, gt_maps)
        for stat, key in _JSD_KEYS.items():
            if gen_stats[stat] is not None and gt_stats[stat] is not None:
                p = metrics.Histogram.from_samples(gen_stats[stat], edges[stat])
                q = metrics.Histogram.from_samples(gt_stats[stat], edges[stat])
                report[key] = metrics.jsd(p, q)
        paired = [
            (sc, ref) for sc, ref in zip(scenarios, gt)
            if _has_trajs(sc) and _has_trajs(ref)
            and np.asarray(sc.trajectories).shape == np.asarray(ref.trajectories).shape
        ]
        if paired:
            w, ade_w, fde_w, mr_w = [], [], [], []
            for sc, ref in paired:
                n = len(sc.scene)
                ade, fde, mr = metrics.ade_fde_mr(sc.trajectories, ref.trajectories,
                                                  cfg.miss_threshold)
                w.append(n)
                ade_w.append(ade * n)
                fde_w.append(fde * n)
                mr_w.append(mr * n)
            tw = float(sum(w))
            report["ade"] = sum(ade_w) / tw
            report["fde"] = sum(fde_w) / tw
            report["mr"] = sum(mr_w) / tw

    report["config"] = config_dict(cfg)
    return report


def save_report(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
