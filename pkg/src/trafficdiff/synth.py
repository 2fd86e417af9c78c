"""Synthetic vectorized maps and ground-truth scenarios.

Maps come from parametric templates (straight, arc, merge); agents are
placed on lanes with small lateral/heading noise and their ground-truth
trajectories are constant-speed Frenet rollouts with a gentle lateral
profile. Generated scenes are rejected and redrawn until they are clean:
zero collisions and zero off-road agents, at init and over the horizon.
"""

import json
import os

import numpy as np

from .errors import InvalidConfig
from .frenet import frenet_rollout, quintic_coeffs
from .geometry import (FrenetCoord, VectorMap, frenet_to_cart, heading_at,
                       make_map, map_from_dict, map_to_dict)
from .metrics import (actor_collision_rate, init_collision_rate,
                      init_offroad_rate, traj_offroad_rate)
from .nets import canonical_order
from .scene import AgentInit, Scenario, Scene, scenario_from_dict, scenario_to_dict


def _straight_lanes(cfg, length):
    xs = np.arange(0.0, length + 1e-9, cfg.lane_point_spacing)
    return [np.column_stack([xs, np.full_like(xs, j * cfg.lane_spacing)])
            for j in range(cfg.lanes_per_map)]


def _arc_lanes(cfg, length):
    r0 = 2.0 * length / np.pi
    lanes = []
    for j in range(cfg.lanes_per_map):
        r = r0 + j * cfg.lane_spacing
        n = max(int(np.ceil(r * np.pi / 2.0 / cfg.lane_point_spacing)), 8)
        phi = np.linspace(-np.pi / 2.0, 0.0, n + 1)
        lanes.append(np.column_stack([r * np.cos(phi), r0 + r * np.sin(phi)]))
    return lanes


def _merge_lanes(cfg, length):
    xs = np.arange(0.0, length + 1e-9, cfg.lane_point_spacing)
    lanes = [np.column_stack([xs, np.zeros_like(xs)])]
    merge_x = 0.6 * length
    y0, y1 = 3.0 * cfg.lane_spacing, cfg.lane_spacing
    u = np.clip(xs / merge_x, 0.0, 1.0)
    ramp = u * u * (3.0 - 2.0 * u)  # smoothstep
    ys = y0 + (y1 - y0) * ramp
    lanes.append(np.column_stack([xs, ys]))
    return lanes[: max(cfg.lanes_per_map, 1)]


_TEMPLATES = {
    "straight": _straight_lanes,
    "arc": _arc_lanes,
    "merge": _merge_lanes,
}


def synth_map(cfg, template, length) -> VectorMap:
    if template not in _TEMPLATES:
        raise InvalidConfig(f"unknown lane template {template!r}")
    polylines = _TEMPLATES[template](cfg, length)
    pts = np.concatenate(polylines)
    m = cfg.map_margin
    bounds = [pts[:, 0].min() - m, pts[:, 1].min() - m,
              pts[:, 0].max() + m, pts[:, 1].max() + m]
    return make_map(polylines, bounds)


def _place_agents(cfg, vmap, n_agents, rng):
    """Noisy on-lane placement with spacing rejection; one speed per lane."""
    lane_speed = rng.uniform(cfg.speed_min, cfg.speed_max, size=len(vmap.lanes))
    agents, frenet = [], []
    for _ in range(n_agents):
        for _ in range(60):
            li = int(rng.integers(len(vmap.lanes)))
            lane = vmap.lanes[li]
            v = float(lane_speed[li])
            s_hi = lane.length - v * cfg.horizon - 2.0
            if s_hi <= 2.0:
                continue
            s = float(rng.uniform(2.0, s_hi))
            d0 = float(np.clip(rng.normal(0.0, cfg.lateral_noise), -1.0, 1.0))
            pos = frenet_to_cart(FrenetCoord(s, d0), lane)
            theta = heading_at(lane, s) + float(rng.normal(0.0, cfg.heading_noise))
            if all(np.hypot(*(pos - a.position)) >= 2.0 * cfg.collision_radius + 1.0
                   for a in agents):
                agents.append(AgentInit(float(pos[0]), float(pos[1]), theta, v, 0))
                frenet.append((li, s, d0))
                break
        else:
            return None, None
    return agents, frenet


def _rollout_traj(cfg, vmap, agent, li, s, d0, rng):
    steps = int(round(cfg.horizon / cfg.dt))
    lane = vmap.lanes[li]
    xy = np.empty((steps, 2))
    xy[0] = agent.position
    if steps > 1:
        d_target = float(np.clip(
            0.5 * d0 + rng.normal(0.0, 0.5 * cfg.traj_lateral_noise), -1.5, 1.5))
        profile = quintic_coeffs(d0, d_target, (steps - 1) * cfg.dt)
        sd = frenet_rollout(profile, s, agent.v, cfg.dt, steps - 1)
        for k, (sk, dk) in enumerate(sd):
            xy[k + 1] = frenet_to_cart(FrenetCoord(sk, dk), lane)
    return xy


def synth_dataset(cfg, seed):
    """Build (maps, scenarios) deterministically from the config and seed."""
    if cfg.synth_maps < 1 or cfg.synth_scenes < 1:
        raise InvalidConfig("need at least one map and one scene")
    if cfg.agents_min < 1 or cfg.agents_max < cfg.agents_min:
        raise InvalidConfig("invalid agents_min/agents_max")
    templates = [t.strip() for t in cfg.synth_templates.split(",") if t.strip()]
    if not templates:
        raise InvalidConfig("synth_templates is empty")
    rng = np.random.default_rng(seed)
    maps = []
    for i in range(cfg.synth_maps):
        length = cfg.lane_length * float(rng.uniform(0.9, 1.1))
        maps.append(synth_map(cfg, templates[i % len(templates)], length))

    scenarios = []
    for j in range(cfg.synth_scenes):
        ref = j % cfg.synth_maps
        vmap = maps[ref]
        n_agents = int(rng.integers(cfg.agents_min, cfg.agents_max + 1))
        for _ in range(40):
            agents, frenet = _place_agents(cfg, vmap, n_agents, rng)
            if agents is None:
                continue
            trajs = np.stack([
                _rollout_traj(cfg, vmap, a, *f, rng)
                for a, f in zip(agents, frenet)
            ])
            scene = Scene(agents, ref)
            perm = canonical_order(scene)
            scene = Scene([agents[i] for i in perm], ref)
            trajs = trajs[perm]
            clean = (
                init_collision_rate(scene) == 0.0
                and init_offroad_rate(scene, vmap, cfg.offroad_threshold) == 0.0
                and actor_collision_rate(trajs, scene.to_array()[:, 4]) == 0.0
                and traj_offroad_rate(trajs, vmap, cfg.offroad_threshold) == 0.0
            )
            if clean:
                scenarios.append(Scenario(scene, trajs, "ground_truth", seed))
                break
        else:
            raise InvalidConfig("could not draw a clean scene; relax the config")
    return maps, scenarios


def save_dataset(maps, scenarios, outdir):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "maps.json"), "w") as fh:
        json.dump([map_to_dict(m) for m in maps], fh, sort_keys=True)
    with open(os.path.join(outdir, "scenarios.json"), "w") as fh:
        json.dump([scenario_to_dict(s) for s in scenarios], fh, sort_keys=True)


def load_dataset(outdir):
    with open(os.path.join(outdir, "maps.json")) as fh:
        maps = [map_from_dict(d) for d in json.load(fh)]
    with open(os.path.join(outdir, "scenarios.json")) as fh:
        scenarios = [scenario_from_dict(d) for d in json.load(fh)]
    return maps, scenarios
