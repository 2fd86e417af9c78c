"""sklearn-style estimators wrapping the two denoisers.

InitDiffuser learns agent initial states conditioned on a map; sampling uses
ancestral DDPM over (x, y, theta, v) per agent. TrajectoryDiffuser learns
PCA-latent trajectories conditioned on map, init poses and Frenet candidate
latents, with optional nearest-candidate guided sampling.

Both estimators normalize geometry into the map-bounds frame (the square
hull of the map scaled to [-1, 1]) so that the same frame exists at training
and sampling time; speeds are min-max normalized from the training set.
"""

import json
import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator

from . import diffusion
from .codec import SceneNormalizer, TrajectoryPca, from_local_frame, to_local_frame
from .errors import EmptyCandidates, ModelNotFitted, NumericFailure
from .frenet import candidates_or_fallback
from .nets import (InitDenoiser, TrajDenoiser, canonical_order, cdb_mask,
                   init_parameters, m2a_mask, map_features)
from .scene import Scene, Scenario, wrap_angle

log = logging.getLogger(__name__)


def map_normalizer(vmap, speed_min, speed_max) -> SceneNormalizer:
    """Normalizer whose region is the map bounds instead of the agent hull."""
    norm = SceneNormalizer(speed_min=speed_min, speed_max=speed_max)
    b = vmap.bounds
    norm.fit(np.array([[b[0], b[1]], [b[2], b[3]]]))
    return norm


class _MapContext:
    """Normalized map tokens for one map, shared across training steps."""

    def __init__(self, vmap, norm, stride):
        scaled = norm.transform_map(vmap)
        feats, lane_ids, positions = map_features(scaled, stride=stride)
        self.feats = torch.from_numpy(feats)
        self.lane_ids = torch.from_numpy(lane_ids)
        self.positions = positions
        self.norm = norm


def _speed_bounds(scenes):
    speeds = np.concatenate([s.to_array()[:, 3] for s in scenes])
    lo, hi = float(speeds.min()), float(speeds.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _state_to_numpy(module):
    return {k: v.detach().numpy().tolist() for k, v in module.state_dict().items()}


def _state_from_numpy(module, blob):
    state = {k: torch.tensor(v, dtype=torch.float64) for k, v in blob.items()}
    module.load_state_dict(state)


class InitDiffuser(BaseEstimator):
    """Diffusion model over agent initializations, fit/sample interface.

    Parameters follow the training config keys: width, layers, lr, epochs,
    p_decentralized, lambda_init, m2a_radius plus the schedule settings.
    """

    def __init__(self, width=32, layers=2, t_max=100, beta_start=1e-4,
                 beta_end=0.05, lr=0.05, momentum=0.9, epochs=100,
                 draws_per_step=8, p_decentralized=0.5, lambda_init=0.5,
                 m2a_radius=2.0, attention="differential", num_types=4,
                 map_stride=1, seed=0):
        self.width = width
        self.layers = layers
        self.t_max = t_max
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.draws_per_step = draws_per_step
        self.p_decentralized = p_decentralized
        self.lambda_init = lambda_init
        self.m2a_radius = m2a_radius
        self.attention = attention
        self.num_types = num_types
        self.map_stride = map_stride
        self.seed = seed

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise ModelNotFitted("InitDiffuser is not fitted")

    def _context(self, vmap):
        norm = map_normalizer(vmap, self.speed_min_, self.speed_max_)
        return _MapContext(vmap, norm, self.map_stride)

    def _predict_eps(self, ctx, x, t, types, a2a):
        """Canonicalize, run the net, undo the ordering. numpy in/out."""
        perm = canonical_order(x)
        x_o = x[perm]
        m2a = m2a_mask(x_o[:, :2], ctx.positions, self.m2a_radius)
        eps_o = self.net_(
            torch.from_numpy(x_o), t, ctx.feats, ctx.lane_ids,
            torch.from_numpy(types[perm]), torch.from_numpy(a2a),
            torch.from_numpy(m2a),
        )
        out = np.empty_like(x)
        out[perm] = eps_o.detach().numpy()
        return out

    def fit(self, scenes, maps):
        """Train on a list of Scenes against their maps (indexed by map_ref)."""
        rng = np.random.default_rng(self.seed)
        self.speed_min_, self.speed_max_ = _speed_bounds(scenes)
        counts = np.bincount(
            np.concatenate([s.to_array()[:, 4].astype(int) for s in scenes]),
            minlength=self.num_types)
        self.type_probs_ = counts / counts.sum()
        self.schedule_ = diffusion.make_schedule(self.t_max, self.beta_start, self.beta_end)

        contexts = {}
        prepared = []
        for scene in scenes:
            ref = scene.map_ref
            if ref not in contexts:
                contexts[ref] = self._context(maps[ref])
            arr = contexts[ref].norm.transform_agents(scene.to_array())
            prepared.append((ref, arr[:, :4], arr[:, 4].astype(np.int64)))

        self.net_ = InitDenoiser(self.width, self.layers, self.num_types,
                                 self.lambda_init, self.attention)
        init_parameters(self.net_, rng)
        opt = torch.optim.SGD(self.net_.parameters(), lr=self.lr,
                              momentum=self.momentum)
        self.loss_history_ = []
        self.mode_counts_ = {"centralized": 0, "decentralized": 0}
        for _ in range(self.epochs):
            order = rng.permutation(len(prepared))
            losses = []
            for idx in order:
                ref, x0, types = prepared[idx]
                ctx = contexts[ref]
                n = x0.shape[0]
                opt.zero_grad()
                # one gradient step per scene; the loss averages several
                # independent (t, eps, mask-mode) draws to cut its variance
                draw_losses = []
                for _ in range(max(self.draws_per_step, 1)):
                    t = int(rng.integers(1, self.t_max + 1))
                    eps = rng.standard_normal((n, 4))
                    x_t = diffusion.forward_sample(x0, t, eps, self.schedule_)
                    mode = ("decentralized" if rng.random() < self.p_decentralized
                            else "centralized")
                    self.mode_counts_[mode] += 1
                    perm = canonical_order(x_t)
                    m2a = m2a_mask(x_t[perm][:, :2], ctx.positions, self.m2a_radius)
                    eps_pred = self.net_(
                        torch.from_numpy(x_t[perm]), t, ctx.feats, ctx.lane_ids,
                        torch.from_numpy(types[perm]),
                        torch.from_numpy(cdb_mask(mode, n)),
                        torch.from_numpy(m2a))
                    draw_losses.append(
                        torch.mean((eps_pred - torch.from_numpy(eps[perm])) ** 2))
                loss = torch.stack(draw_losses).mean()
                if not torch.isfinite(loss):
                    raise NumericFailure("non-finite training loss")
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()))
            self.loss_history_.append(float(np.mean(losses)))
            log.debug("init epoch %d: loss %.5f", len(self.loss_history_),
                      self.loss_history_[-1])
        return self

    def sample(self, vmap, n_agents, seed=0, map_ref=0):
        """Generate a Scene of n_agents on the map; deterministic per seed."""
        self._check_fitted()
        if n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        rng = np.random.default_rng(seed)
        ctx = self._context(vmap)
        types = rng.choice(self.num_types, size=n_agents, p=self.type_probs_)
        a2a = cdb_mask("centralized", n_agents)

        def denoiser(x, t):
            return self._predict_eps(ctx, x, t, types, a2a)

        x0 = diffusion.sample_loop(denoiser, (n_agents, 4), self.schedule_, rng)
        arr = np.column_stack([x0, types.astype(float)])
        arr = ctx.norm.inverse_agents(arr)
        arr[:, 3] = np.maximum(arr[:, 3], 0.0)
        arr = arr[canonical_order(arr)]
        return Scene.from_array(arr, map_ref)

    def attention_variance(self, scene, vmap, seed=0):
        """Per-layer attention-weight variance across diffusion steps.

        Noises the scene to every step t, runs the denoiser with recording
        enabled and returns {"agent_agent": (T, L), "map_agent": (T, L)}
        variances of the combined attention weights.
        """
        self._check_fitted()
        rng = np.random.default_rng(seed)
        ctx = self._context(vmap)
        arr = ctx.norm.transform_agents(scene.to_array())
        x0, types = arr[:, :4], arr[:, 4].astype(np.int64)
        n = x0.shape[0]
        blocks = list(self.net_.blocks)
        for blk in blocks:
            blk["self_attn"].record_weights = True
            blk["cross_attn"].record_weights = True
        a2a = cdb_mask("centralized", n)
        out = {"agent_agent": [], "map_agent": []}
        try:
            for t in range(1, self.t_max + 1):
                eps = rng.standard_normal((n, 4))
                x_t = diffusion.forward_sample(x0, t, eps, self.schedule_)
                self._predict_eps(ctx, x_t, t, types, a2a)
                out["agent_agent"].append(
                    [float(blk["self_attn"].last_weights.var()) for blk in blocks])
                out["map_agent"].append(
                    [float(blk["cross_attn"].last_weights.var()) for blk in blocks])
        finally:
            for blk in blocks:
                blk["self_attn"].record_weights = False
                blk["cross_attn"].record_weights = False
        return {k: np.array(v) for k, v in out.items()}

    def save(self, path):
        self._check_fitted()
        blob = {
            "version": 1,
            "kind": "init",
            "params": self.get_params(),
            "fitted": {
                "speed_min": self.speed_min_,
                "speed_max": self.speed_max_,
                "type_probs": self.type_probs_.tolist(),
            },
            "state": _state_to_numpy(self.net_),
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path) -> "InitDiffuser":
        with open(path) as fh:
            blob = json.load(fh)
        model = cls(**blob["params"])
        model.speed_min_ = blob["fitted"]["speed_min"]
        model.speed_max_ = blob["fitted"]["speed_max"]
        model.type_probs_ = np.asarray(blob["fitted"]["type_probs"])
        model.schedule_ = diffusion.make_schedule(
            model.t_max, model.beta_start, model.beta_end)
        model.net_ = InitDenoiser(model.width, model.layers, model.num_types,
                                  model.lambda_init, model.attention)
        _state_from_numpy(model.net_, blob["state"])
        return model


class TrajectoryDiffuser(BaseEstimator):
    """Latent-trajectory diffusion conditioned on inits, map and candidates."""

    def __init__(self, width=32, layers=2, t_max=100, beta_start=1e-4,
                 beta_end=0.05, lr=0.05, momentum=0.9, epochs=100,
                 lambda_init=0.5, m2a_radius=2.0, attention="differential",
                 v_grid=(0.0, 2.0, 4.0, 8.0, 12.0), d_grid=(-3.0, 0.0, 3.0),
                 horizon=6.0, dt=0.1, lane_radius=5.0, guidance_strength=0.3,
                 num_types=4, map_stride=1, seed=0):
        self.width = width
        self.layers = layers
        self.t_max = t_max
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.lambda_init = lambda_init
        self.m2a_radius = m2a_radius
        self.attention = attention
        self.v_grid = v_grid
        self.d_grid = d_grid
        self.horizon = horizon
        self.dt = dt
        self.lane_radius = lane_radius
        self.guidance_strength = guidance_strength
        self.num_types = num_types
        self.map_stride = map_stride
        self.seed = seed

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise ModelNotFitted("TrajectoryDiffuser is not fitted")

    def _candidate_latents(self, scene, vmap):
        """Per-agent candidate latent codes (N, Cmax, k) plus validity mask."""
        per_agent = [
            candidates_or_fallback(a, vmap, self.v_grid, self.d_grid,
                                   self.horizon, self.dt, self.lane_radius)
            for a in scene.agents
        ]
        codes = []
        for agent, cands in zip(scene.agents, per_agent):
            local = np.stack([to_local_frame(xy, agent) for xy in cands.xy])
            codes.append(self.codec_.transform(local) / self.latent_scale_)
        cmax = max(c.shape[0] for c in codes)
        k = codes[0].shape[1]
        z = np.zeros((len(codes), cmax, k))
        mask = np.zeros((len(codes), cmax), dtype=bool)
        for i, c in enumerate(codes):
            z[i, :c.shape[0]] = c
            mask[i, :c.shape[0]] = True
        return z, mask, per_agent

    def _scene_condition(self, scene, vmap):
        ctx = _MapContext(vmap, map_normalizer(vmap, self.speed_min_, self.speed_max_),
                          self.map_stride)
        arr = ctx.norm.transform_agents(scene.to_array())
        inits = arr[:, :4]
        types = arr[:, 4].astype(np.int64)
        m2a = m2a_mask(inits[:, :2], ctx.positions, self.m2a_radius)
        a2a = cdb_mask("centralized", len(scene))
        return ctx, inits, types, a2a, m2a

    def _forward(self, ctx, z_t, t, inits, types, cand_z, cand_mask, a2a, m2a):
        return self.net_(
            torch.from_numpy(z_t), t, ctx.feats, ctx.lane_ids,
            torch.from_numpy(inits), torch.from_numpy(types),
            torch.from_numpy(cand_z), torch.from_numpy(cand_mask),
            torch.from_numpy(a2a), torch.from_numpy(m2a))

    def fit(self, scenarios, maps, codec=None):
        """Train on Scenarios; fits the PCA codec internally when not given."""
        rng = np.random.default_rng(self.seed)
        scenes = [sc.scene for sc in scenarios]
        self.speed_min_, self.speed_max_ = _speed_bounds(scenes)
        if codec is None:
            locals_all = np.concatenate([
                np.stack([to_local_frame(sc.trajectories[i], a)
                          for i, a in enumerate(sc.scene.agents)])
                for sc in scenarios
            ])
            codec = TrajectoryPca().fit(locals_all)
        self.codec_ = codec
        ev = np.asarray(codec.explained_variance_, dtype=float)
        floor = 1e-3 * np.sqrt(ev.max()) + 1e-12
        self.latent_scale_ = np.maximum(np.sqrt(ev), floor)
        self.schedule_ = diffusion.make_schedule(self.t_max, self.beta_start,
                                                 self.beta_end)

        prepared = []
        for sc in scenarios:
            ctx, inits, types, a2a, m2a = self._scene_condition(sc.scene, maps[sc.scene.map_ref])
            local = np.stack([to_local_frame(sc.trajectories[i], a)
                              for i, a in enumerate(sc.scene.agents)])
            z0 = self.codec_.transform(local) / self.latent_scale_
            cand_z, cand_mask, _ = self._candidate_latents(sc.scene, maps[sc.scene.map_ref])
            prepared.append((ctx, inits, types, a2a, m2a, z0, cand_z, cand_mask))

        k = self.codec_.n_components
        self.net_ = TrajDenoiser(self.width, self.layers, k, self.num_types,
                                 self.lambda_init, self.attention)
        init_parameters(self.net_, rng)
        opt = torch.optim.SGD(self.net_.parameters(), lr=self.lr,
                              momentum=self.momentum)
        self.loss_history_ = []
        for _ in range(self.epochs):
            order = rng.permutation(len(prepared))
            losses = []
            for idx in order:
                ctx, inits, types, a2a, m2a, z0, cand_z, cand_mask = prepared[idx]
                n = z0.shape[0]
                t = int(rng.integers(1, self.t_max + 1))
                eps = rng.standard_normal((n, k))
                z_t = diffusion.forward_sample(z0, t, eps, self.schedule_)
                opt.zero_grad()
                eps_pred = self._forward(ctx, z_t, t, inits, types, cand_z,
                                         cand_mask, a2a, m2a)
                loss = torch.mean((eps_pred - torch.from_numpy(eps)) ** 2)
                if not torch.isfinite(loss):
                    raise NumericFailure("non-finite training loss")
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()))
            self.loss_history_.append(float(np.mean(losses)))
            log.debug("traj epoch %d: loss %.5f", len(self.loss_history_),
                      self.loss_history_[-1])
        return self

    def sample(self, scene, vmap, seed=0, use_guidance=False,
               guidance_strength=None, candidates=None):
        """Generate one trajectory per agent of the scene.

        With use_guidance, every posterior step pulls each agent's latent
        toward its nearest candidate latent. Pre-built per-agent candidates
        (list of AgentCandidates) can be supplied to skip regeneration.
        """
        self._check_fitted()
        if len(scene) < 1:
            raise ValueError("scene has no agents")
        rng = np.random.default_rng(seed)
        ctx, inits, types, a2a, m2a = self._scene_condition(scene, vmap)
        if candidates is None:
            cand_z, cand_mask, per_agent = self._candidate_latents(scene, vmap)
        else:
            per_agent = candidates
            codes = []
            for agent, cands in zip(scene.agents, per_agent):
                local = np.stack([to_local_frame(xy, agent) for xy in cands.xy])
                codes.append(self.codec_.transform(local) / self.latent_scale_)
            cmax = max(c.shape[0] for c in codes)
            cand_z = np.zeros((len(codes), cmax, codes[0].shape[1]))
            cand_mask = np.zeros((len(codes), cmax), dtype=bool)
            for i, c in enumerate(codes):
                cand_z[i, :c.shape[0]] = c
                cand_mask[i, :c.shape[0]] = True

        def denoiser(z, t):
            out = self._forward(ctx, z, t, inits, types, cand_z, cand_mask, a2a, m2a)
            return out.detach().numpy()

        guidance = None
        if use_guidance:
            strength = (self.guidance_strength if guidance_strength is None
                        else guidance_strength)

            def guidance(z, t):
                pulled = np.empty_like(z)
                for i in range(z.shape[0]):
                    pulled[i] = diffusion.guided_step(
                        z[i], cand_z[i][cand_mask[i]], strength)
                return pulled

        k = self.codec_.n_components
        z0 = diffusion.sample_loop(denoiser, (len(scene), k), self.schedule_,
                                   rng, guidance=guidance)
        local = self.codec_.inverse_transform(z0 * self.latent_scale_)
        trajs = np.empty_like(local)
        for i, agent in enumerate(scene.agents):
            world = from_local_frame(local[i], agent)
            trajs[i] = world + (agent.position - world[0])  # re-anchor at init
        if not np.all(np.isfinite(trajs)):
            raise NumericFailure("non-finite sampled trajectories")
        return Scenario(scene, trajs, provenance="generated", seed=seed)

    def save(self, path):
        self._check_fitted()
        blob = {
            "version": 1,
            "kind": "trajectory",
            "params": self.get_params(),
            "fitted": {
                "speed_min": self.speed_min_,
                "speed_max": self.speed_max_,
                "latent_scale": self.latent_scale_.tolist(),
            },
            "codec": self.codec_.to_dict(),
            "state": _state_to_numpy(self.net_),
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path) -> "TrajectoryDiffuser":
        with open(path) as fh:
            blob = json.load(fh)
        params = dict(blob["params"])
        for key in ("v_grid", "d_grid"):
            params[key] = tuple(params[key])
        model = cls(**params)
        model.speed_min_ = blob["fitted"]["speed_min"]
        model.speed_max_ = blob["fitted"]["speed_max"]
        model.latent_scale_ = np.asarray(blob["fitted"]["latent_scale"])
        model.codec_ = TrajectoryPca.from_dict(blob["codec"])
        model.schedule_ = diffusion.make_schedule(
            model.t_max, model.beta_start, model.beta_end)
        model.net_ = TrajDenoiser(model.width, model.layers,
                                  model.codec_.n_components, model.num_types,
                                  model.lambda_init, model.attention)
        _state_from_numpy(model.net_, blob["state"])
        return model
