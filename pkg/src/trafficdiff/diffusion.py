"""DDPM machinery: noise schedules, forward/reverse kernels, ancestral sampling.

Steps are 1-based: t runs over 1..t_max and indexes schedule arrays at t-1.
All operations are numpy-based and deterministic given the supplied
np.random.Generator.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCandidates, InvalidScheduleParams, ShapeMismatch


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray       # (T,) per-step variances
    alpha: np.ndarray      # 1 - beta
    alpha_bar: np.ndarray  # cumulative product of alpha
    sigma2: np.ndarray     # posterior variances, sigma2[0] = beta[0]

    @property
    def t_max(self) -> int:
        return len(self.beta)


def make_schedule(t_max, beta_start=1e-4, beta_end=0.05) -> NoiseSchedule:
    """Linear variance schedule over t_max steps."""
    if t_max < 1:
        raise InvalidScheduleParams("t_max must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidScheduleParams(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, t_max)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma2 = np.empty(t_max)
    sigma2[0] = beta[0]
    if t_max > 1:
        sigma2[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
    return NoiseSchedule(beta, alpha, alpha_bar, sigma2)


def _check_step(t, sched):
    if not 1 <= t <= sched.t_max:
        raise ValueError(f"step {t} outside 1..{sched.t_max}")


def forward_sample(x0, t, eps, sched: NoiseSchedule):
    """Closed-form marginal draw: sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {x0.shape} vs eps {eps.shape}")
    _check_step(t, sched)
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_step(x_t, eps_pred, t, sched: NoiseSchedule, noise=None):
    """One reverse step from t to t-1.

    mean = (x_t - beta_t/sqrt(1-ab_t) * eps_pred) / sqrt(alpha_t); noise is
    added scaled by sigma_t except at t = 1, where the step is deterministic.
    """
    x_t = np.asarray(x_t, dtype=float)
    eps_pred = np.asarray(eps_pred, dtype=float)
    if x_t.shape != eps_pred.shape:
        raise ShapeMismatch(f"x_t {x_t.shape} vs eps_pred {eps_pred.shape}")
    _check_step(t, sched)
    i = t - 1
    mu = (x_t - sched.beta[i] / np.sqrt(1.0 - sched.alpha_bar[i]) * eps_pred) \
        / np.sqrt(sched.alpha[i])
    if t == 1 or noise is None:
        return mu
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x_t.shape:
        raise ShapeMismatch(f"noise {noise.shape} vs x_t {x_t.shape}")
    return mu + np.sqrt(sched.sigma2[i]) * noise


def ddpm_loss(eps, eps_pred) -> float:
    """Mean squared error between true and predicted noise."""
    eps = np.asarray(eps, dtype=float)
    eps_pred = np.asarray(eps_pred, dtype=float)
    if eps.shape != eps_pred.shape:
        raise ShapeMismatch(f"eps {eps.shape} vs eps_pred {eps_pred.shape}")
    return float(np.mean((eps - eps_pred) ** 2))


def sample_loop(denoiser, shape, sched: NoiseSchedule, rng, guidance=None):
    """Ancestral sampling from a standard-normal draw down to t = 1.

    denoiser(x_t, t) predicts the noise; guidance, when given, is applied to
    the iterate after every posterior step as guidance(x, t). Bit-reproducible
    for a given rng state.
    """
    x = rng.standard_normal(shape)
    for t in range(sched.t_max, 0, -1):
        eps_pred = denoiser(x, t)
        noise = rng.standard_normal(shape) if t > 1 else None
        x = posterior_step(x, eps_pred, t, sched, noise)
        if guidance is not None:
            x = guidance(x, t)
    return x


def analytic_gaussian_denoiser(mu, s2, sched: NoiseSchedule):
    """Exact E[eps | x_t] when x0 ~ N(mu, s2); the sampler's test oracle."""
    if np.any(np.asarray(s2, dtype=float) <= 0.0):
        raise ValueError("s2 must be positive")
    mu = np.asarray(mu, dtype=float)
    s2 = np.asarray(s2, dtype=float)

    def denoiser(x_t, t):
        ab = sched.alpha_bar[t - 1]
        return np.sqrt(1.0 - ab) * (x_t - np.sqrt(ab) * mu) / (ab * s2 + 1.0 - ab)

    return denoiser


def guided_step(x, candidates, strength):
    """Pull x toward its nearest candidate: x - strength*(x - c*).

    Euclidean nearest over the candidate rows; ties resolve to the lowest
    index. strength = 0 is the identity.
    """
    if strength < 0.0:
        raise ValueError("strength must be >= 0")
    x = np.asarray(x, dtype=float)
    cands = np.asarray(candidates, dtype=float)
    if cands.ndim != 2 or cands.shape[0] == 0:
        raise EmptyCandidates("need a non-empty (C, k) candidate array")
    if cands.shape[1] != x.shape[-1]:
        raise ShapeMismatch(f"candidates {cands.shape} vs x {x.shape}")
    dists = np.linalg.norm(cands - x, axis=1)
    best = int(np.argmin(dists))
    return x - strength * (x - cands[best])
