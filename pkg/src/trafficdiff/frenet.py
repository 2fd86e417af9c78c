"""Frenet-frame motion primitives.

Candidates follow s(h) = s0 + v*h longitudinally and a quintic lateral
profile d(h) = d0 + a3*h^3 + a4*h^4 + a5*h^5 whose boundary conditions pin
zero lateral velocity and acceleration at both ends. A candidate set fans
out over a grid of speeds and terminal lateral offsets for every reference
lane near the agent.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import HorizonExceeded, NonPositiveHorizon, NoReferenceLane
from .geometry import FrenetCoord, VectorMap, cart_to_frenet, frenet_to_cart, nearest_lanes


@dataclass(frozen=True)
class QuinticProfile:
    d0: float
    delta_d: float
    horizon: float
    a3: float
    a4: float
    a5: float

    def value(self, h):
        h = np.asarray(h, dtype=float)
        return self.d0 + self.a3 * h**3 + self.a4 * h**4 + self.a5 * h**5

    def velocity(self, h):
        h = np.asarray(h, dtype=float)
        return 3 * self.a3 * h**2 + 4 * self.a4 * h**3 + 5 * self.a5 * h**4

    def acceleration(self, h):
        h = np.asarray(h, dtype=float)
        return 6 * self.a3 * h + 12 * self.a4 * h**2 + 20 * self.a5 * h**3


class CandidateMeta(NamedTuple):
    v: float
    d_target: float
    lane: int  # -1 for the straight-line fallback


@dataclass
class AgentCandidates:
    """Cartesian candidate trajectories for one agent, (C, H, 2)."""

    xy: np.ndarray
    meta: list

    def __len__(self):
        return len(self.meta)


def quintic_coeffs(d0, d_target, horizon) -> QuinticProfile:
    """Solve the lateral quintic for d(horizon) = d_target with zero end rates.

    The missing h^1 and h^2 terms make d'(0) = d''(0) = 0 structural; the
    terminal conditions d(H) = d_target, d'(H) = 0, d''(H) = 0 determine
    (a3, a4, a5) uniquely.
    """
    if horizon <= 0.0:
        raise NonPositiveHorizon(f"horizon must be positive, got {horizon}")
    delta = d_target - d0
    h = float(horizon)
    return QuinticProfile(
        d0=float(d0),
        delta_d=float(delta),
        horizon=h,
        a3=10.0 * delta / h**3,
        a4=-15.0 * delta / h**4,
        a5=6.0 * delta / h**5,
    )


def frenet_rollout(profile: QuinticProfile, s0, v, dt, steps):
    """Sample (s, d) at h = dt, 2*dt, ..., steps*dt under constant speed v."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps * dt > profile.horizon + 1e-9:
        raise HorizonExceeded(f"{steps} steps of {dt}s exceed horizon {profile.horizon}s")
    h = dt * np.arange(1, steps + 1)
    return np.column_stack([s0 + v * h, profile.value(h)])


def _num_samples(horizon, dt):
    steps = int(round(horizon / dt))
    if steps < 1 or dt <= 0.0:
        raise NonPositiveHorizon("horizon must cover at least one step")
    return steps


def generate_candidates(init, vmap: VectorMap, v_grid, d_grid, horizon=6.0,
                        dt=0.1, lane_radius=5.0) -> AgentCandidates:
    """Fan out candidates over speed x lateral-offset grids per reference lane.

    Every candidate has H = round(horizon/dt) points; the first is the
    agent's initial position (the h = 0 anchor) and the quintic reaches its
    terminal offset exactly at the last sample. Candidates whose lateral
    excursion exceeds lane_radius + max|d_grid| are rejected.

    Raises NoReferenceLane when no lane lies within lane_radius; the caller
    decides the fallback (see `straight_fallback`).
    """
    if len(v_grid) == 0 or len(d_grid) == 0:
        raise ValueError("speed and offset grids must be non-empty")
    matches = nearest_lanes(init.position, vmap, lane_radius)
    if not matches:
        raise NoReferenceLane(
            f"no lane within {lane_radius} m of ({init.x:.2f}, {init.y:.2f})")
    steps = _num_samples(horizon, dt)
    d_cap = lane_radius + max(abs(float(d)) for d in d_grid)
    anchor = init.position

    trajs, meta = [], []
    for match in matches:
        fc0 = cart_to_frenet(anchor, match.lane)
        for v in v_grid:
            for d_target in d_grid:
                if steps == 1:
                    sd = np.empty((0, 2))
                else:
                    profile = quintic_coeffs(fc0.d, d_target, (steps - 1) * dt)
                    sd = frenet_rollout(profile, fc0.s, v, dt, steps - 1)
                lateral = np.concatenate([[fc0.d], sd[:, 1]])
                if np.abs(lateral).max() > d_cap:
                    continue
                xy = np.empty((steps, 2))
                xy[0] = anchor
                for k, (s, d) in enumerate(sd):
                    xy[k + 1] = frenet_to_cart(FrenetCoord(s, d), match.lane)
                trajs.append(xy)
                meta.append(CandidateMeta(float(v), float(d_target), match.index))
    if not trajs:
        raise NoReferenceLane("all candidates rejected by the lateral cap")
    return AgentCandidates(np.stack(trajs), meta)


def straight_fallback(init, horizon=6.0, dt=0.1) -> AgentCandidates:
    """Single constant-velocity candidate along the agent's own heading."""
    steps = _num_samples(horizon, dt)
    u = np.array([np.cos(init.theta), np.sin(init.theta)])
    h = dt * np.arange(steps)
    xy = init.position + np.outer(init.v * h, u)
    return AgentCandidates(xy[None, :, :], [CandidateMeta(float(init.v), 0.0, -1)])


def candidates_or_fallback(init, vmap, v_grid, d_grid, horizon=6.0, dt=0.1,
                           lane_radius=5.0) -> AgentCandidates:
    """generate_candidates with the straight-line fallback for laneless agents."""
    try:
        return generate_candidates(init, vmap, v_grid, d_grid, horizon, dt, lane_radius)
    except NoReferenceLane:
        return straight_fallback(init, horizon, dt)


def candidates_to_dicts(cands: AgentCandidates):
    """JSON-ready dump: one {v, d, lane, xy} record per candidate."""
    return [
        {"v": m.v, "d": m.d_target, "lane": m.lane, "xy": cands.xy[i].tolist()}
        for i, m in enumerate(cands.meta)
    ]
