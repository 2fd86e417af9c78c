"""Denoiser networks and their attention machinery.

Both denoisers share the same building blocks: single-head attention with an
optional dual-softmax (differential) combination, a per-lane map point
encoder, sinusoidal step/rank embeddings and GELU feed-forward blocks with
residual connections. Everything runs in float64 so gradients can be checked
against central finite differences.
"""

import math

import numpy as np
import torch
from torch import nn

from .errors import EmptyCandidates, ShapeMismatch
from .scene import Scene


def canonical_order(agents):
    """Left-to-right, top-to-bottom permutation.

    Sorts by x ascending, ties by y descending, final ties by original index;
    returns the permutation as an index array.
    """
    if isinstance(agents, Scene):
        arr = agents.to_array()
    else:
        arr = np.asarray(agents, dtype=float)
    return np.lexsort((np.arange(arr.shape[0]), -arr[:, 1], arr[:, 0]))


def cdb_mask(mode, n):
    """Agent-to-agent mask: full attention (centralized) or identity."""
    if n < 1:
        raise ValueError("need at least one agent")
    if mode == "centralized":
        return np.ones((n, n), dtype=bool)
    if mode == "decentralized":
        return np.eye(n, dtype=bool)
    raise ValueError(f"unknown CDB mode {mode!r}")


def m2a_mask(agent_pos, token_pos, radius):
    """Map-to-agent mask: tokens within radius of each agent.

    Rows with no token in range fall back to the single nearest token so
    every query attends to at least one key.
    """
    agent_pos = np.asarray(agent_pos, dtype=float)
    token_pos = np.asarray(token_pos, dtype=float)
    dist = np.linalg.norm(agent_pos[:, None, :] - token_pos[None, :, :], axis=-1)
    mask = dist <= radius
    for i in np.where(~mask.any(axis=1))[0]:
        mask[i, int(np.argmin(dist[i]))] = True
    return mask


def _attention_weights(scores, mask):
    """Masked softmax over the last dim; rows without keys come out all-zero."""
    if mask is None:
        return torch.softmax(scores, dim=-1)
    has_key = mask.any(dim=-1, keepdim=True)
    safe = mask | ~has_key  # keep softmax finite on empty rows
    filled = scores.masked_fill(~safe, float("-inf"))
    return torch.softmax(filled, dim=-1) * has_key.to(scores.dtype)


def standard_attention(q, k, v, mask=None):
    """softmax(q k^T / sqrt(d)) v with an optional boolean mask."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    return _attention_weights(scores, mask) @ v


def diff_attention(q1, k1, q2, k2, v, lam, mask=None):
    """Differential attention: (softmax(s1) - lam * softmax(s2)) v.

    The two score groups share the mask; lam = 0 reduces to standard
    attention on group 1.
    """
    if q1.shape != q2.shape or k1.shape != k2.shape:
        raise ShapeMismatch("query/key groups must have matching shapes")
    if q1.shape[-1] != k1.shape[-1] or k1.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"q {tuple(q1.shape)}, k {tuple(k1.shape)}, v {tuple(v.shape)}")
    scale = math.sqrt(q1.shape[-1])
    w1 = _attention_weights(q1 @ k1.transpose(-2, -1) / scale, mask)
    w2 = _attention_weights(q2 @ k2.transpose(-2, -1) / scale, mask)
    return (w1 - lam * w2) @ v


def sinusoidal_embedding(pos, dim):
    """Standard sin/cos embedding of positions (scalar or (N,)) into dim."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    pos = torch.as_tensor(pos, dtype=torch.float64)
    half = dim // 2
    freq = torch.exp(torch.arange(half, dtype=torch.float64)
                     * (-math.log(10000.0) / max(half - 1, 1)))
    ang = pos.unsqueeze(-1) * freq
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class AttentionBlock(nn.Module):
    """Single-head attention with residual and output projection.

    kind selects the score combination: "differential" holds two q/k groups
    and a learnable lambda, "standard" a single group. Queries whose mask row
    is empty pass through unchanged. Set record_weights to stash the last
    combined attention weights for the variance probe.
    """

    def __init__(self, dim, kind="differential", lambda_init=0.5):
        super().__init__()
        if kind not in ("differential", "standard"):
            raise ValueError(f"unknown attention kind {kind!r}")
        self.kind = kind
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.q1 = nn.Linear(dim, dim)
        self.k1 = nn.Linear(dim, dim)
        if kind == "differential":
            self.q2 = nn.Linear(dim, dim)
            self.k2 = nn.Linear(dim, dim)
            self.lam = nn.Parameter(torch.tensor(float(lambda_init)))
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        self.record_weights = False
        self.last_weights = None

    def _weights(self, x_q, x_kv, mask):
        scale = math.sqrt(x_q.shape[-1])
        s1 = self.q1(x_q) @ self.k1(x_kv).transpose(-2, -1) / scale
        w = _attention_weights(s1, mask)
        if self.kind == "differential":
            s2 = self.q2(x_q) @ self.k2(x_kv).transpose(-2, -1) / scale
            w = w - self.lam * _attention_weights(s2, mask)
        return w

    def forward(self, x_q, x_kv, mask=None):
        q_in = self.norm_q(x_q)
        kv_in = self.norm_kv(x_kv)
        w = self._weights(q_in, kv_in, mask)
        if self.record_weights:
            self.last_weights = w.detach().clone()
        return x_q + self.proj(w @ self.v(kv_in))


class FeedForward(nn.Module):
    def __init__(self, dim, mult=4):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mult * dim)
        self.fc2 = nn.Linear(mult * dim, dim)

    def forward(self, x):
        return x + self.fc2(torch.nn.functional.gelu(self.fc1(self.norm(x))))


class MapEncoder(nn.Module):
    """Per-point projection plus one self-attention pass within each lane."""

    N_FEATURES = 4  # x, y, heading, curvature

    def __init__(self, dim):
        super().__init__()
        self.proj = nn.Linear(self.N_FEATURES, dim)
        self.attn = AttentionBlock(dim, kind="standard")

    def forward(self, feats, lane_ids):
        tokens = self.proj(feats)
        mask = lane_ids.unsqueeze(0) == lane_ids.unsqueeze(1)
        return self.attn(tokens, tokens, mask)


def map_features(vmap, stride=1):
    """Stack lane points into (P, 4) features [x, y, heading, curvature].

    Returns (features, lane_ids, positions); stride subsamples points per
    lane while always keeping both endpoints.
    """
    feats, ids = [], []
    for i, lane in enumerate(vmap.lanes):
        sel = np.arange(0, len(lane.points), stride)
        if sel[-1] != len(lane.points) - 1:
            sel = np.append(sel, len(lane.points) - 1)
        feats.append(np.column_stack([
            lane.points[sel], lane.heading[sel], lane.curvature[sel]]))
        ids.append(np.full(len(sel), i))
    feats = np.concatenate(feats, axis=0)
    ids = np.concatenate(ids)
    return feats, ids, feats[:, :2].copy()


class InitDenoiser(nn.Module):
    """Noise predictor for agent initial states (x, y, theta, v).

    Expects canonically ordered agents; sinusoidal rank embeddings are added
    after the input projection, the diffusion step enters as a sinusoidal
    embedding shared by all agent tokens, and the agent type is embedded as
    conditioning (the type channel itself is not denoised).
    """

    STATE_CHANNELS = 4

    def __init__(self, width=32, layers=2, num_types=4, lambda_init=0.5,
                 attention="differential"):
        super().__init__()
        self.width = width
        self.input = nn.Linear(self.STATE_CHANNELS, width)
        self.type_emb = nn.Embedding(num_types, width)
        self.step_mlp = nn.Sequential(nn.Linear(width, width), nn.GELU(),
                                      nn.Linear(width, width))
        self.map_encoder = MapEncoder(width)
        self.blocks = nn.ModuleList([
            nn.ModuleDict({
                "self_attn": AttentionBlock(width, attention, lambda_init),
                "cross_attn": AttentionBlock(width, attention, lambda_init),
                "ffn": FeedForward(width),
            })
            for _ in range(layers)
        ])
        self.head = nn.Linear(width, self.STATE_CHANNELS)
        self.double()

    def forward(self, x_t, t, map_feats, lane_ids, types, a2a, m2a):
        n = x_t.shape[0]
        h = self.input(x_t)
        h = h + self.type_emb(types)
        h = h + sinusoidal_embedding(torch.arange(n, dtype=torch.float64), self.width)
        h = h + self.step_mlp(sinusoidal_embedding(float(t), self.width))
        m = self.map_encoder(map_feats, lane_ids)
        for blk in self.blocks:
            h = blk["self_attn"](h, h, a2a)
            h = blk["cross_attn"](h, m, m2a)
            h = blk["ffn"](h)
        return self.head(h)


class TrajDenoiser(nn.Module):
    """Noise predictor for latent trajectories.

    Each agent token attends to its own Frenet candidate latents first, then
    alternates agent self-attention and map cross-attention; conditioning is
    the (normalized) init pose, the agent type and the diffusion step.
    """

    def __init__(self, width=32, layers=2, latent_dim=10, num_types=4,
                 lambda_init=0.5, attention="differential"):
        super().__init__()
        self.width = width
        self.latent_dim = latent_dim
        self.input = nn.Linear(latent_dim, width)
        self.init_proj = nn.Linear(4, width)
        self.type_emb = nn.Embedding(num_types, width)
        self.step_mlp = nn.Sequential(nn.Linear(width, width), nn.GELU(),
                                      nn.Linear(width, width))
        self.cand_proj = nn.Linear(latent_dim, width)
        self.map_encoder = MapEncoder(width)
        self.blocks = nn.ModuleList([
            nn.ModuleDict({
                "cand_attn": AttentionBlock(width, "standard"),
                "self_attn": AttentionBlock(width, attention, lambda_init),
                "map_attn": AttentionBlock(width, attention, lambda_init),
                "ffn": FeedForward(width),
            })
            for _ in range(layers)
        ])
        self.head = nn.Linear(width, latent_dim)
        self.double()

    def forward(self, z_t, t, map_feats, lane_ids, inits, types, cand_z,
                cand_mask, a2a, m2a):
        if not bool(cand_mask.any(dim=1).all()):
            raise EmptyCandidates("every agent needs at least one candidate")
        h = self.input(z_t)
        h = h + self.init_proj(inits)
        h = h + self.type_emb(types)
        h = h + self.step_mlp(sinusoidal_embedding(float(t), self.width))
        m = self.map_encoder(map_feats, lane_ids)
        cand_tokens = self.cand_proj(cand_z)
        for blk in self.blocks:
            ctx = blk["cand_attn"](h.unsqueeze(1), cand_tokens,
                                   cand_mask.unsqueeze(1)).squeeze(1)
            h = blk["self_attn"](ctx, ctx, a2a)
            h = blk["map_attn"](h, m, m2a)
            h = blk["ffn"](h)
        return self.head(h)


def init_parameters(module, rng):
    """Deterministic seeded init: uniform +-1/sqrt(fan_in), zero biases.

    Learnable lambda scalars keep their constructor value and LayerNorm
    affine parameters keep their identity defaults. Parameter order is the
    module definition order, so a fixed rng reproduces weights exactly.
    """
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("lam") or "norm" in name:
                continue
            if p.ndim >= 2:
                bound = 1.0 / math.sqrt(p.shape[1])
                vals = rng.uniform(-bound, bound, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals))
            else:
                p.zero_()
