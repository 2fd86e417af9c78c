"""Two-stage diffusion traffic-scenario generation on vectorized maps."""

from .codec import SceneNormalizer, TrajectoryPca, normalize_scene
from .config import Config, load_config, save_config
from .diffusion import (NoiseSchedule, analytic_gaussian_denoiser, ddpm_loss,
                        forward_sample, guided_step, make_schedule,
                        posterior_step, sample_loop)
from .frenet import (AgentCandidates, QuinticProfile, candidates_or_fallback,
                     frenet_rollout, generate_candidates, quintic_coeffs)
from .geometry import (FrenetCoord, Lane, VectorMap, arclength_parameterize,
                       cart_to_frenet, frenet_to_cart, load_map, make_map,
                       nearest_lanes, save_map)
from .models import InitDiffuser, TrajectoryDiffuser
from .perturb import Perturbation, perturb_map, remap_agents
from .pipeline import evaluate, fit_codec, generate_scenario, uniform_baseline
from .scene import AgentInit, Scenario, Scene
from .synth import synth_dataset

__version__ = "0.1.0"

__all__ = [
    "AgentCandidates", "AgentInit", "Config", "FrenetCoord", "InitDiffuser",
    "Lane", "NoiseSchedule", "Perturbation", "QuinticProfile", "Scenario",
    "Scene", "SceneNormalizer", "TrajectoryDiffuser", "TrajectoryPca",
    "VectorMap", "analytic_gaussian_denoiser", "arclength_parameterize",
    "candidates_or_fallback", "cart_to_frenet", "ddpm_loss", "evaluate",
    "fit_codec", "forward_sample", "frenet_rollout", "frenet_to_cart",
    "generate_candidates", "generate_scenario", "guided_step", "load_config",
    "load_map", "make_map", "make_schedule", "nearest_lanes",
    "normalize_scene", "perturb_map", "posterior_step", "quintic_coeffs",
    "remap_agents", "sample_loop", "save_config", "save_map", "synth_dataset",
    "uniform_baseline",
]
