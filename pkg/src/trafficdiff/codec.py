"""Trajectory latent codec and scene normalization.

Trajectories are moved into each agent's local frame (initial position at the
origin, initial heading along +x), flattened in x1,y1,x2,y2,... order and
compressed with a fixed-size PCA basis. Scene normalization maps the agent
bounding region into [-1, 1]^2 with a single aspect-preserving scale and
min-max normalizes speeds.
"""

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InsufficientSamples, ModelNotFitted
from .geometry import VectorMap, make_map
from .scene import AgentInit, Scene, wrap_angle


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_local_frame(traj, init: AgentInit):
    """World -> agent frame: init position to origin, init heading to +x."""
    traj = np.asarray(traj, dtype=float)
    return (traj - init.position) @ _rotation(-init.theta).T


def from_local_frame(traj, init: AgentInit):
    """Inverse of `to_local_frame`."""
    traj = np.asarray(traj, dtype=float)
    return traj @ _rotation(init.theta).T + init.position


class TrajectoryPca(BaseEstimator, TransformerMixin):
    """PCA codec for fixed-horizon trajectories.

    Parameters
    ----------
    n_components : size of the latent code (10 by default).

    Fitted attributes: `mean_` (2H,), `components_` (k, 2H) with orthonormal
    rows and a deterministic sign convention (the largest-magnitude entry of
    each row is positive), `explained_variance_` (k, non-increasing) and
    `residual_bound_`, the max-norm reconstruction error over the training
    set.
    """

    def __init__(self, n_components=10):
        self.n_components = n_components

    def fit(self, trajectories, y=None):
        X = np.asarray(trajectories, dtype=float)
        if X.ndim != 3 or X.shape[2] != 2:
            raise ValueError("expected trajectories of shape (M, H, 2)")
        m, h = X.shape[0], X.shape[1]
        k = self.n_components
        if k > 2 * h:
            raise ValueError(f"n_components {k} exceeds flattened size {2 * h}")
        if m < k:
            raise InsufficientSamples(f"need at least {k} trajectories, got {m}")
        flat = X.reshape(m, 2 * h)
        self.mean_ = flat.mean(axis=0)
        centered = flat - self.mean_
        _, svals, vt = np.linalg.svd(centered, full_matrices=False)
        basis = vt[:k].copy()
        for row in basis:
            j = int(np.argmax(np.abs(row)))
            if row[j] < 0.0:
                row *= -1.0
        self.components_ = basis
        self.explained_variance_ = svals[:k] ** 2 / max(m - 1, 1)
        self.horizon_steps_ = h
        recon = self.inverse_transform(self.transform(X))
        self.residual_bound_ = float(np.abs(recon - X).max())
        return self

    def _check_fitted(self):
        if not hasattr(self, "components_"):
            raise ModelNotFitted("TrajectoryPca is not fitted")

    def transform(self, trajectories):
        """Encode one (H, 2) trajectory or a batch (M, H, 2) into codes."""
        self._check_fitted()
        X = np.asarray(trajectories, dtype=float)
        single = X.ndim == 2
        if single:
            X = X[None]
        flat = X.reshape(X.shape[0], -1)
        if flat.shape[1] != self.mean_.size:
            raise ValueError(f"expected horizon {self.horizon_steps_} trajectories")
        codes = (flat - self.mean_) @ self.components_.T
        return codes[0] if single else codes

    def inverse_transform(self, codes):
        """Decode codes back to (H, 2) trajectories."""
        self._check_fitted()
        Z = np.asarray(codes, dtype=float)
        single = Z.ndim == 1
        if single:
            Z = Z[None]
        flat = self.mean_ + Z @ self.components_
        out = flat.reshape(Z.shape[0], self.horizon_steps_, 2)
        return out[0] if single else out

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "n_components": self.n_components,
            "mean": self.mean_.tolist(),
            "basis": self.components_.tolist(),
            "explained_variance": self.explained_variance_.tolist(),
            "residual_bound": self.residual_bound_,
            "flatten_order": "xy-interleaved",
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrajectoryPca":
        model = cls(n_components=doc["n_components"])
        model.mean_ = np.asarray(doc["mean"], dtype=float)
        model.components_ = np.asarray(doc["basis"], dtype=float)
        model.explained_variance_ = np.asarray(doc["explained_variance"], dtype=float)
        model.residual_bound_ = float(doc["residual_bound"])
        model.horizon_steps_ = model.mean_.size // 2
        return model

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TrajectoryPca":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class SceneNormalizer(BaseEstimator):
    """Affine scene frame: agent bounding region -> [-1, 1]^2.

    A single scale keeps the aspect ratio, so headings are unchanged. Speeds
    are min-max normalized into [-1, 1] with bounds taken from the training
    set (passed at construction). A degenerate agent region falls back to a
    unit half-extent.
    """

    def __init__(self, speed_min=0.0, speed_max=15.0):
        self.speed_min = speed_min
        self.speed_max = speed_max

    def fit(self, positions, y=None):
        """Fit center/scale from agent positions (N, 2) or a Scene."""
        if isinstance(positions, Scene):
            positions = positions.to_array()[:, :2]
        pts = np.asarray(positions, dtype=float).reshape(-1, 2)
        if pts.shape[0] < 1:
            raise ValueError("need at least one agent")
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        self.center_ = (lo + hi) / 2.0
        half = float(np.max(hi - lo) / 2.0)
        self.half_extent_ = half if half > 0.0 else 1.0
        return self

    def _check_fitted(self):
        if not hasattr(self, "center_"):
            raise ModelNotFitted("SceneNormalizer is not fitted")

    def transform_points(self, pts):
        self._check_fitted()
        return (np.asarray(pts, dtype=float) - self.center_) / self.half_extent_

    def inverse_points(self, pts):
        self._check_fitted()
        return np.asarray(pts, dtype=float) * self.half_extent_ + self.center_

    def _speed_span(self):
        span = self.speed_max - self.speed_min
        return span if span > 0.0 else 1.0

    def transform_speed(self, v):
        return 2.0 * (np.asarray(v, dtype=float) - self.speed_min) / self._speed_span() - 1.0

    def inverse_speed(self, v):
        return (np.asarray(v, dtype=float) + 1.0) / 2.0 * self._speed_span() + self.speed_min

    def transform_agents(self, arr):
        """Normalize (N, >=4) agent rows [x, y, theta, v, ...] in place-free form."""
        arr = np.array(arr, dtype=float)
        arr[:, :2] = self.transform_points(arr[:, :2])
        arr[:, 3] = self.transform_speed(arr[:, 3])
        return arr

    def inverse_agents(self, arr):
        arr = np.array(arr, dtype=float)
        arr[:, :2] = self.inverse_points(arr[:, :2])
        arr[:, 2] = wrap_angle(arr[:, 2])
        arr[:, 3] = self.inverse_speed(arr[:, 3])
        return arr

    def transform_scene(self, scene: Scene) -> Scene:
        return Scene.from_array(self.transform_agents(scene.to_array()), scene.map_ref)

    def inverse_scene(self, scene: Scene) -> Scene:
        return Scene.from_array(self.inverse_agents(scene.to_array()), scene.map_ref)

    def transform_map(self, vmap: VectorMap) -> VectorMap:
        """Scale lane geometry into the scene frame; lane features recomputed."""
        self._check_fitted()
        return make_map([self.transform_points(lane.points) for lane in vmap.lanes])


def normalize_scene(scene: Scene, speed_min=0.0, speed_max=15.0):
    """Fit a SceneNormalizer on the scene and return (scene', normalizer)."""
    norm = SceneNormalizer(speed_min=speed_min, speed_max=speed_max)
    norm.fit(scene)
    return norm.transform_scene(scene), norm
