"""Agent initial states, scenes and sampled scenarios."""

from dataclasses import dataclass, field

import numpy as np


def wrap_angle(theta):
    """Wrap an angle (or array of angles) to [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class AgentInit:
    """Initial pose of one agent: position, heading, speed and type id."""

    x: float
    y: float
    theta: float
    v: float
    c: int = 0

    def __post_init__(self):
        self.theta = float(wrap_angle(self.theta))

    @property
    def position(self):
        return np.array([self.x, self.y])


@dataclass
class Scene:
    """A set of agent initializations on one map."""

    agents: list
    map_ref: int = 0

    def __len__(self):
        return len(self.agents)

    def to_array(self):
        """(N, 5) array of [x, y, theta, v, c] rows."""
        return np.array([[a.x, a.y, a.theta, a.v, float(a.c)] for a in self.agents])

    @classmethod
    def from_array(cls, arr, map_ref=0):
        agents = [AgentInit(r[0], r[1], r[2], r[3], int(round(r[4]))) for r in np.asarray(arr, dtype=float)]
        return cls(agents, map_ref)


@dataclass
class Scenario:
    """A scene plus one trajectory per agent (N, H, 2)."""

    scene: Scene
    trajectories: np.ndarray
    provenance: str = "generated"
    seed: int = 0


def scene_to_dict(scene: Scene) -> dict:
    return {"map": scene.map_ref, "agents": scene.to_array().tolist()}


def scene_from_dict(doc: dict) -> Scene:
    return Scene.from_array(doc["agents"], doc.get("map", 0))


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "map": sc.scene.map_ref,
        "agents": sc.scene.to_array().tolist(),
        "trajectories": np.asarray(sc.trajectories).tolist(),
        "provenance": sc.provenance,
        "seed": sc.seed,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    scene = Scene.from_array(doc["agents"], doc.get("map", 0))
    return Scenario(scene, np.asarray(doc["trajectories"], dtype=float),
                    doc.get("provenance", "generated"), doc.get("seed", 0))
