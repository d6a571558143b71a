"""Denoising-diffusion core for observation-to-action policies.

Covers the variance schedule, the forward noising map, the noise-prediction
training step, the single reverse-denoising update, and the guided
(conditional/unconditional) noise combination.  Two denoiser architectures
are provided:

* ``basic_mlp``: one trunk applied to [noisy action, observation, timestep
  embedding] concatenated;
* ``mlp_sieve``: separate single-hidden-layer encoders for observation,
  timestep and noisy action feeding a residual trunk that re-concatenates
  the raw action and timestep after every hidden layer.

Conditioning dropout zeroes the observation embedding (the observation slice
itself for ``basic_mlp``), which is what makes the unconditional branch of
guided sampling meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from ._kernels import gelu, gelu_grad
from .envs import NormStats
from .errors import ConfigError, DomainError, ShapeError, StateError, TrainingError
from .nnet import (AdamState, Layer, MlpCache, MlpModel, Param, TimeEmbedding,
                   init_mlp, sinusoidal_embed_batch)

ARCHITECTURES = ("basic_mlp", "mlp_sieve")

DEFAULT_HIDDEN = 512
DEFAULT_DEPTH = 3
DEFAULT_EMB_DIM = 128


@dataclass(frozen=True)
class VarianceSchedule:
    """Noise schedule arrays indexed by timestep tau in 1..steps (array index
    tau-1).  sigma is the sqrt-beta choice for the reverse-step noise scale."""

    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for arr in (self.beta, self.alpha, self.alpha_bar, self.sigma):
            if arr.shape != (self.steps,):
                raise ShapeError("schedule arrays must have length equal to the step count")


def build_schedule(steps: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> VarianceSchedule:
    """Linear ramp of beta from beta_min to beta_max inclusive over ``steps``."""
    if steps < 1:
        raise ConfigError("schedule needs at least one step")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(f"beta endpoints must satisfy 0 < min <= max < 1, got [{beta_min}, {beta_max}]")
    if steps > 1 and beta_min == beta_max:
        raise ConfigError("beta_min must be strictly below beta_max when steps > 1")
    beta = np.linspace(beta_min, beta_max, steps)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)
    return VarianceSchedule(steps, beta, alpha, alpha_bar, sigma)


def forward_noise(a, tau: int, sched: VarianceSchedule, z) -> np.ndarray:
    """sqrt(abar_tau) * a + sqrt(1 - abar_tau) * z, elementwise."""
    a = np.asarray(a, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if a.shape != z.shape:
        raise ShapeError(f"action {a.shape} and noise {z.shape} shapes differ")
    if not 1 <= tau <= sched.steps:
        raise ConfigError(f"tau must be in 1..{sched.steps}, got {tau}")
    ab = sched.alpha_bar[tau - 1]
    return np.sqrt(ab) * a + np.sqrt(1.0 - ab) * z


def reverse_update(a_tau, tau: int, eps, sched: VarianceSchedule, z) -> np.ndarray:
    """One reverse step: (a_tau - (1-alpha)/sqrt(1-abar) * eps)/sqrt(alpha) + sigma*z."""
    if not 1 <= tau <= sched.steps:
        raise ConfigError(f"tau must be in 1..{sched.steps}, got {tau}")
    i = tau - 1
    coef = (1.0 - sched.alpha[i]) / np.sqrt(1.0 - sched.alpha_bar[i])
    mean = (a_tau - coef * eps) / np.sqrt(sched.alpha[i])
    return mean + sched.sigma[i] * z


class BasicMlpDenoiser:
    """Trunk on the concatenation [a_tau, observation, timestep embedding]."""

    architecture = "basic_mlp"

    def __init__(self, obs_dim: int, act_dim: int, t_max: int, net: MlpModel,
                 emb_dim: int = DEFAULT_EMB_DIM):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.t_max = t_max
        self.emb_dim = emb_dim
        self.time_emb = TimeEmbedding(emb_dim)
        self.net = net

    @classmethod
    def create(cls, obs_dim, act_dim, t_max, rng, hidden=DEFAULT_HIDDEN,
               depth=DEFAULT_DEPTH, emb_dim=DEFAULT_EMB_DIM):
        sizes = [act_dim + obs_dim + emb_dim] + [hidden] * depth + [act_dim]
        return cls(obs_dim, act_dim, t_max, init_mlp(sizes, "gelu", rng), emb_dim)

    def _inputs(self, a_tau, taus, obs, drop_mask):
        a_tau = np.asarray(a_tau, dtype=np.float64)
        obs = np.asarray(obs, dtype=np.float64)
        n = a_tau.shape[0]
        if a_tau.shape != (n, self.act_dim) or obs.shape != (n, self.obs_dim):
            raise ShapeError("denoiser input shapes do not match the model")
        if drop_mask is not None:
            keep = 1.0 - np.asarray(drop_mask, dtype=np.float64)[:, None]
            obs = obs * keep
        t_feat = sinusoidal_embed_batch(taus, self.time_emb)
        return np.concatenate([a_tau, obs, t_feat], axis=1)

    def make_cache(self) -> MlpCache:
        return MlpCache()

    def predict(self, a_tau, taus, obs, drop_mask=None, cache: MlpCache | None = None):
        return self.net.forward(self._inputs(a_tau, taus, obs, drop_mask), cache)

    def backward(self, cache, upstream):
        dx = self.net.backward(cache, upstream)
        return dx[:, : self.act_dim]

    def parameters(self) -> list[Param]:
        return self.net.parameters("net.")

    def zero_grads(self):
        self.net.zero_grads()

    def to_tensors(self):
        return {p.name: p.value for p in self.parameters()}

    @classmethod
    def from_tensors(cls, meta, tensors):
        depth = meta["depth"]
        layers = [Layer(tensors[f"net.layer{i}.w"], tensors[f"net.layer{i}.b"])
                  for i in range(depth + 1)]
        return cls(meta["obs_dim"], meta["act_dim"], meta["t_max"],
                   MlpModel(layers, "gelu"), meta["emb_dim"])

    def arch_meta(self):
        return {"depth": len(self.net.layers) - 1, "hidden": self.net.layers[0].out_dim,
                "emb_dim": self.emb_dim}


class SieveCache:
    """Intermediates of one split-encoder forward pass."""

    def __init__(self):
        self.ready = False
        self.consumed = False


class SieveDenoiser:
    """Split encoders (observation / timestep / action) into a residual trunk.

    The raw noisy action and normalized timestep are re-concatenated into the
    input of every trunk layer; hidden layers 2..depth add a skip connection
    from the previous hidden state.  The timestep encoder is the fixed
    sinusoidal featurization followed by a learned linear map; the other two
    encoders are single-hidden-layer leaky-ReLU networks.
    """

    architecture = "mlp_sieve"

    def __init__(self, obs_dim, act_dim, t_max, obs_enc: MlpModel, act_enc: MlpModel,
                 time_lin: Layer, trunk: list[Layer], out: Layer,
                 emb_dim: int = DEFAULT_EMB_DIM):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.t_max = t_max
        self.emb_dim = emb_dim
        self.time_emb = TimeEmbedding(emb_dim)
        self.obs_enc = obs_enc
        self.act_enc = act_enc
        self.time_lin = time_lin
        self.trunk = trunk
        self.out = out

    @classmethod
    def create(cls, obs_dim, act_dim, t_max, rng, hidden=DEFAULT_HIDDEN,
               depth=DEFAULT_DEPTH, emb_dim=DEFAULT_EMB_DIM):
        obs_enc = init_mlp([obs_dim, emb_dim, emb_dim], "leaky_relu", rng)
        act_enc = init_mlp([act_dim, emb_dim, emb_dim], "leaky_relu", rng)
        time_lin = init_mlp([emb_dim, emb_dim], "identity", rng).layers[0]
        extra = act_dim + 1  # raw action + normalized timestep at every layer
        trunk = []
        in_dim = 3 * emb_dim + extra
        for _ in range(depth):
            trunk.append(init_mlp([in_dim, hidden], "identity", rng).layers[0])
            in_dim = hidden + extra
        out = init_mlp([hidden, act_dim], "identity", rng).layers[0]
        return cls(obs_dim, act_dim, t_max, obs_enc, act_enc, time_lin, trunk, out, emb_dim)

    def make_cache(self) -> SieveCache:
        return SieveCache()

    def predict(self, a_tau, taus, obs, drop_mask=None, cache: SieveCache | None = None):
        a_tau = np.asarray(a_tau, dtype=np.float64)
        obs = np.asarray(obs, dtype=np.float64)
        taus = np.asarray(taus)
        n = a_tau.shape[0]
        if a_tau.shape != (n, self.act_dim) or obs.shape != (n, self.obs_dim):
            raise ShapeError("denoiser input shapes do not match the model")
        if not (np.isfinite(a_tau).all() and np.isfinite(obs).all()):
            raise DomainError("non-finite denoiser input")
        keep = None
        if drop_mask is not None:
            keep = 1.0 - np.asarray(drop_mask, dtype=np.float64)[:, None]

        o_cache = MlpCache()
        o_e = self.obs_enc.forward(obs, o_cache)
        if keep is not None:
            o_e = o_e * keep
        a_cache = MlpCache()
        a_e = self.act_enc.forward(a_tau, a_cache)
        t_feat = sinusoidal_embed_batch(taus, self.time_emb)
        t_e = self.time_lin.forward(t_feat)
        tau_norm = (np.asarray(taus, dtype=np.float64) / self.t_max)[:, None]
        extras = np.concatenate([a_tau, tau_norm], axis=1)

        h = np.concatenate([o_e, t_e, a_e], axis=1)
        inputs, preacts, hiddens = [], [], []
        for i, layer in enumerate(self.trunk):
            u = np.concatenate([h, extras], axis=1)
            z = layer.forward(u)
            g = gelu(z)
            h_new = g + h if i > 0 else g  # residual once widths match
            inputs.append(u)
            preacts.append(z)
            hiddens.append(h)
            h = h_new
        eps = self.out.forward(h)

        if cache is not None:
            cache.o_cache, cache.a_cache = o_cache, a_cache
            cache.keep, cache.t_feat = keep, t_feat
            cache.inputs, cache.preacts, cache.hiddens = inputs, preacts, hiddens
            cache.h_final, cache.n = h, n
            cache.ready = True
        return eps

    def backward(self, cache: SieveCache, upstream):
        if cache is None or not getattr(cache, "ready", False) or cache.consumed:
            raise StateError("backward requires the cache of a matching forward pass")
        cache.consumed = True
        upstream = np.asarray(upstream, dtype=np.float64)
        da_extra = np.zeros((cache.n, self.act_dim))

        dh = self.out.backward(cache.h_final, upstream)
        for i in range(len(self.trunk) - 1, -1, -1):
            dz = gelu_grad(cache.preacts[i], dh)
            du = self.trunk[i].backward(cache.inputs[i], dz)
            width = cache.hiddens[i].shape[1]
            dh_prev = du[:, :width]
            da_extra += du[:, width : width + self.act_dim]
            if i > 0:
                dh = dh_prev + dh  # residual skip
            else:
                dh = dh_prev
        dh0 = dh
        emb = self.emb_dim
        do_e = dh0[:, :emb]
        dt_e = dh0[:, emb : 2 * emb]
        da_e = dh0[:, 2 * emb :]
        if cache.keep is not None:
            do_e = do_e * cache.keep
        self.obs_enc.backward(cache.o_cache, do_e)
        self.time_lin.backward(cache.t_feat, dt_e)
        da_tau = self.act_enc.backward(cache.a_cache, da_e) + da_extra
        return da_tau

    def parameters(self) -> list[Param]:
        params = self.obs_enc.parameters("obs_enc.")
        params += self.act_enc.parameters("act_enc.")
        params += [Param("time_lin.w", self.time_lin.w, self.time_lin.gw),
                   Param("time_lin.b", self.time_lin.b, self.time_lin.gb)]
        for i, layer in enumerate(self.trunk):
            params += [Param(f"trunk{i}.w", layer.w, layer.gw),
                       Param(f"trunk{i}.b", layer.b, layer.gb)]
        params += [Param("out.w", self.out.w, self.out.gw),
                   Param("out.b", self.out.b, self.out.gb)]
        return params

    def zero_grads(self):
        for p in self.parameters():
            p.grad[:] = 0.0

    def to_tensors(self):
        return {p.name: p.value for p in self.parameters()}

    @classmethod
    def from_tensors(cls, meta, tensors):
        obs_enc = MlpModel([Layer(tensors["obs_enc.layer0.w"], tensors["obs_enc.layer0.b"]),
                            Layer(tensors["obs_enc.layer1.w"], tensors["obs_enc.layer1.b"])],
                           "leaky_relu")
        act_enc = MlpModel([Layer(tensors["act_enc.layer0.w"], tensors["act_enc.layer0.b"]),
                            Layer(tensors["act_enc.layer1.w"], tensors["act_enc.layer1.b"])],
                           "leaky_relu")
        time_lin = Layer(tensors["time_lin.w"], tensors["time_lin.b"])
        trunk = [Layer(tensors[f"trunk{i}.w"], tensors[f"trunk{i}.b"])
                 for i in range(meta["depth"])]
        out = Layer(tensors["out.w"], tensors["out.b"])
        return cls(meta["obs_dim"], meta["act_dim"], meta["t_max"], obs_enc, act_enc,
                   time_lin, trunk, out, meta["emb_dim"])

    def arch_meta(self):
        return {"depth": len(self.trunk), "hidden": self.out.in_dim, "emb_dim": self.emb_dim}


def make_denoiser(architecture: str, obs_dim: int, act_dim: int, t_max: int,
                  rng: np.random.Generator, hidden=DEFAULT_HIDDEN, depth=DEFAULT_DEPTH,
                  emb_dim=DEFAULT_EMB_DIM):
    if architecture == "basic_mlp":
        return BasicMlpDenoiser.create(obs_dim, act_dim, t_max, rng, hidden, depth, emb_dim)
    if architecture == "mlp_sieve":
        return SieveDenoiser.create(obs_dim, act_dim, t_max, rng, hidden, depth, emb_dim)
    raise ConfigError(f"unknown architecture {architecture!r}")


def denoiser_from_tensors(meta: dict, tensors: dict):
    arch = meta["architecture"]
    if arch == "basic_mlp":
        return BasicMlpDenoiser.from_tensors(meta, tensors)
    if arch == "mlp_sieve":
        return SieveDenoiser.from_tensors(meta, tensors)
    raise ConfigError(f"unknown architecture {arch!r} in checkpoint")


def cfg_epsilon(denoiser, a_tau, taus, obs, weight: float) -> np.ndarray:
    """Guided noise estimate: (1+w) * conditional - w * unconditional."""
    if weight < 0:
        raise ConfigError(f"guidance weight must be >= 0, got {weight}")
    eps_cond = denoiser.predict(a_tau, taus, obs)
    n = np.asarray(a_tau).shape[0]
    eps_uncond = denoiser.predict(a_tau, taus, obs, drop_mask=np.ones(n, dtype=bool))
    return (1.0 + weight) * eps_cond - weight * eps_uncond


def ddpm_training_step(denoiser, obs, act_norm, sched: VarianceSchedule,
                       dropout_prob: float, rng: np.random.Generator,
                       opt: AdamState, lr: float | None = None) -> float:
    """One noise-prediction step on a batch of normalized (obs, action) rows.

    Per row: tau ~ U{1..T}, z ~ N(0, I), conditioning dropped with the given
    probability; the loss is the batch mean of the summed squared noise
    error.  Backpropagates, applies one optimizer update, and returns the
    pre-step loss.  Draw order (taus, z, mask) is part of the contract.
    """
    obs = np.asarray(obs, dtype=np.float64)
    act = np.asarray(act_norm, dtype=np.float64)
    n = act.shape[0]
    if n == 0:
        raise TrainingError("empty training batch")
    taus = rng.integers(1, sched.steps + 1, size=n)
    z = rng.standard_normal(act.shape)
    drop_mask = rng.random(n) < dropout_prob
    ab = sched.alpha_bar[taus - 1][:, None]
    a_tau = np.sqrt(ab) * act + np.sqrt(1.0 - ab) * z

    cache = denoiser.make_cache()
    eps = denoiser.predict(a_tau, taus, obs, drop_mask=drop_mask, cache=cache)
    resid = eps - z
    loss = float((resid**2).sum(axis=1).mean())
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite training loss ({loss})")
    denoiser.zero_grads()
    denoiser.backward(cache, (2.0 / n) * resid)
    opt.step(denoiser.parameters(), lr)
    return loss


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr to 0 over the whole run."""
    frac = min(step / max(total_steps, 1), 1.0)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * frac))


def train_diffusion(dataset, architecture: str, sched: VarianceSchedule, *,
                    epochs: int, batch_size: int, learning_rate: float,
                    dropout: float, init_rng, train_rng,
                    hidden=DEFAULT_HIDDEN, depth=DEFAULT_DEPTH,
                    emb_dim=DEFAULT_EMB_DIM) -> tuple:
    """Full training run; returns (policy, per-epoch mean losses)."""
    obs = dataset.observations
    act = dataset.norm.normalize(dataset.actions)
    n = obs.shape[0]
    denoiser = make_denoiser(architecture, obs.shape[1], act.shape[1],
                             sched.steps, init_rng, hidden, depth, emb_dim)
    opt = AdamState(denoiser.parameters(), lr=learning_rate)
    steps_per_epoch = (n + batch_size - 1) // batch_size
    total_steps = epochs * steps_per_epoch
    losses = []
    step = 0
    for _ in range(epochs):
        perm = train_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            lr = cosine_lr(learning_rate, step, total_steps)
            epoch_loss += ddpm_training_step(
                denoiser, obs[idx], act[idx], sched, dropout, train_rng, opt, lr
            ) * len(idx)
            step += 1
        losses.append(epoch_loss / n)
    policy = DiffusionPolicy(denoiser, sched, dataset.norm, dropout)
    return policy, losses


@dataclass
class DiffusionPolicy:
    """A trained denoiser plus everything sampling needs: the schedule it was
    trained with, the action normalization, and the conditioning-dropout rate
    (> 0 means the unconditional branch was trained)."""

    denoiser: object
    sched: VarianceSchedule
    norm: NormStats
    dropout: float


def save_policy(path, policy: DiffusionPolicy, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "diffusion",
        "architecture": policy.denoiser.architecture,
        "obs_dim": policy.denoiser.obs_dim,
        "act_dim": policy.denoiser.act_dim,
        "t_max": policy.sched.steps,
        "dropout": policy.dropout,
        "norm": policy.norm.to_meta(),
    }
    meta.update(policy.denoiser.arch_meta())
    if extra_meta:
        meta.update(extra_meta)
    tensors = dict(policy.denoiser.to_tensors())
    tensors["schedule.beta"] = policy.sched.beta
    tensors["schedule.alpha"] = policy.sched.alpha
    tensors["schedule.alpha_bar"] = policy.sched.alpha_bar
    tensors["schedule.sigma"] = policy.sched.sigma
    ckpt.save_checkpoint(path, meta, tensors)


def load_policy(path) -> DiffusionPolicy:
    meta, tensors = ckpt.load_checkpoint(path)
    if meta.get("kind") != "diffusion":
        raise ConfigError(f"{path} is not a diffusion checkpoint (kind={meta.get('kind')!r})")
    sched = VarianceSchedule(
        meta["t_max"], tensors["schedule.beta"], tensors["schedule.alpha"],
        tensors["schedule.alpha_bar"], tensors["schedule.sigma"],
    )
    denoiser = denoiser_from_tensors(meta, tensors)
    return DiffusionPolicy(denoiser, sched, NormStats.from_meta(meta["norm"]),
                           meta["dropout"])
