"""Action-sampling schemes for trained diffusion policies.

Three schemes share one reverse-denoising loop:

* ``diffusion_bc``     — plain reverse chain, T steps;
* ``diffusion_x``      — the same chain followed by ``extra_steps`` more
                         noise-free updates pinned at tau = 1, nudging the
                         sample toward higher-likelihood regions;
* ``diffusion_kde``    — draw several candidates, fit a Gaussian kernel
                         density over them, return the highest-scoring one.

All samplers are pure functions of (policy, observation, config, rng state).
With ``extra_steps = 0`` the extended scheme consumes the identical rng
stream as the plain one and returns bit-identical samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import DiffusionPolicy, cfg_epsilon, reverse_update
from .errors import ConfigError, SamplingError

SCHEMES = ("diffusion_bc", "diffusion_x", "diffusion_kde")


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance weight for sampling and the conditioning-dropout rate used in
    training; weight 0 with guidance enabled reduces exactly to the
    conditional model."""

    weight: float = 0.0
    dropout: float = 0.1

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigError(f"guidance weight must be >= 0, got {self.weight}")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError(f"dropout must be in [0, 1], got {self.dropout}")


@dataclass(frozen=True)
class SamplerConfig:
    scheme: str = "diffusion_bc"
    extra_steps: int = 0
    kde_samples: int = 100
    kde_width: float = 0.4
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    use_guidance: bool = False  # False selects the guidance-free code path

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown sampling scheme {self.scheme!r}")
        if self.scheme == "diffusion_x" and self.extra_steps < 1:
            raise ConfigError("diffusion_x requires extra_steps >= 1")
        if self.scheme == "diffusion_bc" and self.extra_steps != 0:
            raise ConfigError("diffusion_bc forces extra_steps = 0")
        if self.kde_samples < 1:
            raise ConfigError("kde_samples must be >= 1")
        if self.kde_width <= 0:
            raise ConfigError("kde_width must be positive")


@dataclass(frozen=True)
class KdeModel:
    """Equal-weight isotropic Gaussian mixture over the support points."""

    points: np.ndarray  # (k, d)
    bandwidth: float


def kde_fit(samples, width: float) -> KdeModel:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 1:
        raise ConfigError("kde needs at least one support point")
    if width <= 0:
        raise ConfigError(f"kde width must be positive, got {width}")
    return KdeModel(samples, float(width))


def kde_log_density(model: KdeModel, x) -> np.ndarray | float:
    """Log density at x (single point or batch), log-sum-exp stabilized."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    k, d = model.points.shape
    diff = pts[:, None, :] - model.points[None, :, :]
    sq = (diff**2).sum(axis=2) / (2.0 * model.bandwidth**2)
    m = (-sq).max(axis=1)
    lse = m + np.log(np.exp(-sq - m[:, None]).sum(axis=1))
    out = lse - np.log(k) - 0.5 * d * np.log(2.0 * np.pi * model.bandwidth**2)
    return float(out[0]) if single else out


def _denoise_chain(policy: DiffusionPolicy, obs_rows: np.ndarray, cfg: SamplerConfig,
                   rng: np.random.Generator, n: int, extra_steps: int) -> np.ndarray:
    """Batched reverse chain in normalized action space.

    Iterates i = T .. 1-extra_steps with tau = max(i, 1); fresh noise enters
    only while tau > 1, so the extra phase is deterministic.
    """
    den = policy.denoiser
    sched = policy.sched
    d = den.act_dim
    a = rng.standard_normal((n, d))
    obs = np.broadcast_to(obs_rows, (n, den.obs_dim)) if obs_rows.ndim == 1 else obs_rows
    zero = np.zeros((n, d))
    for i in range(sched.steps, -extra_steps, -1):
        tau = max(i, 1)
        taus = np.full(n, tau)
        if cfg.use_guidance:
            eps = cfg_epsilon(den, a, taus, obs, cfg.guidance.weight)
        else:
            eps = den.predict(a, taus, obs)
        z = rng.standard_normal((n, d)) if tau > 1 else zero
        a = reverse_update(a, tau, eps, sched, z)
        if not np.isfinite(a).all():
            raise SamplingError(f"non-finite sample at denoising step tau={tau}", tau=tau)
    return a


def sample_batch(policy: DiffusionPolicy, obs, cfg: SamplerConfig,
                 rng: np.random.Generator, n: int,
                 kde_chunk: int = 100) -> np.ndarray:
    """n de-normalized actions for one observation under the configured scheme.

    Density-screened sampling runs the candidate chains for up to
    ``kde_chunk`` output actions as one batch (candidate block i of the batch
    belongs to output action i); scoring and argmax stay per-action.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if n < 0:
        raise ConfigError("sample count must be >= 0")
    if n == 0:
        return np.zeros((0, policy.denoiser.act_dim))
    if cfg.scheme == "diffusion_kde":
        d = policy.denoiser.act_dim
        k = cfg.kde_samples
        out = np.empty((n, d))
        for start in range(0, n, kde_chunk):
            stop = min(start + kde_chunk, n)
            block = stop - start
            candidates = _denoise_chain(policy, obs, cfg, rng, block * k, 0)
            candidates = candidates.reshape(block, k, d)
            for i in range(block):
                out[start + i] = _kde_select(candidates[i], cfg)
        return policy.norm.denormalize(out)
    extra = cfg.extra_steps if cfg.scheme == "diffusion_x" else 0
    a = _denoise_chain(policy, obs, cfg, rng, n, extra)
    return policy.norm.denormalize(a)


def _kde_select(candidates: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Highest-density candidate (lowest index on exact ties)."""
    if candidates.shape[0] == 1:
        return candidates[0]
    model = kde_fit(candidates, cfg.kde_width)
    scores = kde_log_density(model, candidates)
    return candidates[int(np.argmax(scores))]


def _kde_pick(policy, obs, cfg, rng) -> np.ndarray:
    """One screened action (normalized): draw kde_samples candidates via the
    plain chain, score each under the fitted density, take the argmax."""
    candidates = _denoise_chain(policy, obs, cfg, rng, cfg.kde_samples, 0)
    return _kde_select(candidates, cfg)


def sample_diffusion_bc(policy: DiffusionPolicy, obs, cfg: SamplerConfig,
                        rng: np.random.Generator) -> np.ndarray:
    """One action via the plain reverse chain."""
    obs = np.asarray(obs, dtype=np.float64)
    a = _denoise_chain(policy, obs, cfg, rng, 1, 0)
    return policy.norm.denormalize(a)[0]


def sample_diffusion_x(policy: DiffusionPolicy, obs, cfg: SamplerConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """One action via the extended chain (extra noise-free steps at tau=1)."""
    obs = np.asarray(obs, dtype=np.float64)
    a = _denoise_chain(policy, obs, cfg, rng, 1, cfg.extra_steps)
    return policy.norm.denormalize(a)[0]


def sample_diffusion_kde(policy: DiffusionPolicy, obs, cfg: SamplerConfig,
                         rng: np.random.Generator) -> np.ndarray:
    """One action via density screening of kde_samples candidates."""
    obs = np.asarray(obs, dtype=np.float64)
    a = _kde_pick(policy, obs, cfg, rng)
    return policy.norm.denormalize(a[None, :])[0]
