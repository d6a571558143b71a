"""Dense MLP machinery: forward evaluation, exact reverse-mode gradients,
an adaptive-moment optimizer, and the sinusoidal timestep embedding.

Everything runs in float64.  Models are plain parameter stores with
shape-identical gradient buffers; ``forward`` with a cache records the
intermediate activations that ``backward`` consumes.  Forward passes without
a cache never mutate the model, so a frozen model is safe to share across
concurrent samplers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError, ShapeError, StateError, TrainingError

ACTIVATIONS = ("identity", "gelu", "leaky_relu")
LEAKY_SLOPE = 0.01


def act_forward(name: str, x: np.ndarray) -> np.ndarray:
    if name == "gelu":
        return _kernels.gelu(x)
    if name == "leaky_relu":
        return _kernels.leaky_relu(x, LEAKY_SLOPE)
    if name == "identity":
        return x
    raise ConfigError(f"unknown activation {name!r}")


def act_backward(name: str, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if name == "gelu":
        return _kernels.gelu_grad(x, upstream)
    if name == "leaky_relu":
        return _kernels.leaky_relu_grad(x, upstream, LEAKY_SLOPE)
    if name == "identity":
        return upstream
    raise ConfigError(f"unknown activation {name!r}")


@dataclass
class Param:
    """A named parameter tensor paired with its gradient buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray


class Layer:
    """One affine layer: weight (out, in), bias (out,), plus gradient buffers."""

    def __init__(self, w: np.ndarray, b: np.ndarray):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError(f"layer shapes do not compose: w{w.shape} b{b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise DomainError("layer parameters must be finite")
        self.w = np.ascontiguousarray(w)
        self.b = np.ascontiguousarray(b)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.T + self.b

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients and return the input gradient."""
        self.gw += upstream.T @ x
        self.gb += upstream.sum(axis=0)
        return upstream @ self.w


class MlpCache:
    """Activations recorded by a forward pass, consumed exactly once by backward."""

    def __init__(self):
        self.inputs: list[np.ndarray] = []  # input to each affine layer
        self.preacts: list[np.ndarray] = []  # pre-activation of each hidden layer
        self.consumed = False


class MlpModel:
    """A stack of affine layers with one hidden activation; the last layer is linear."""

    def __init__(self, layers: list[Layer], activation: str = "gelu"):
        if not layers:
            raise ConfigError("model needs at least one layer")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"consecutive layers do not compose: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = layers
        self.activation = activation

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: np.ndarray, cache: MlpCache | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"input width {x.shape} does not match first layer ({self.in_dim})")
        if not np.isfinite(x).all():
            raise DomainError("non-finite input to forward pass")
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if cache is not None:
                cache.inputs.append(h)
            z = layer.forward(h)
            if i < last:
                if cache is not None:
                    cache.preacts.append(z)
                h = act_forward(self.activation, z)
            else:
                h = z
        return h[0] if squeeze else h

    def backward(self, cache: MlpCache | None, upstream: np.ndarray) -> np.ndarray:
        """Exact gradients of the forward map; accumulates into the layer buffers.

        Returns the gradient with respect to the forward input.
        """
        if cache is None or cache.consumed or len(cache.inputs) != len(self.layers):
            raise StateError("backward requires the cache of a matching forward pass")
        cache.consumed = True
        upstream = np.asarray(upstream, dtype=np.float64)
        squeeze = upstream.ndim == 1
        if squeeze:
            upstream = upstream[None, :]
        if upstream.shape != (cache.inputs[0].shape[0], self.out_dim):
            raise ShapeError(f"upstream gradient has shape {upstream.shape}")
        grad = upstream
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1:
                grad = act_backward(self.activation, cache.preacts[i], grad)
            grad = self.layers[i].backward(cache.inputs[i], grad)
        return grad[0] if squeeze else grad

    def parameters(self, prefix: str = "") -> list[Param]:
        params = []
        for i, layer in enumerate(self.layers):
            params.append(Param(f"{prefix}layer{i}.w", layer.w, layer.gw))
            params.append(Param(f"{prefix}layer{i}.b", layer.b, layer.gb))
        return params

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.gw[:] = 0.0
            layer.gb[:] = 0.0


def init_mlp(sizes: list[int], activation: str, rng: np.random.Generator) -> MlpModel:
    """Fan-balanced uniform init: each layer drawn from +-sqrt(6/(in+out)), zero bias."""
    if len(sizes) < 2:
        raise ConfigError("need at least input and output sizes")
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out)))
    return MlpModel(layers, activation)


def mlp_forward(model: MlpModel, x, cache: MlpCache | None = None) -> np.ndarray:
    return model.forward(x, cache)


def mlp_backward(model: MlpModel, cache: MlpCache | None, upstream) -> np.ndarray:
    return model.backward(cache, upstream)


class AdamState:
    """Adaptive-moment accumulators for a fixed, ordered parameter list."""

    def __init__(self, params: list[Param], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self, params: list[Param], lr: float | None = None) -> None:
        """One update from the current gradient buffers; increments the counter by 1."""
        if len(params) != len(self.m):
            raise StateError("parameter list does not match optimizer state")
        for p in params:
            if not np.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient in {p.name}")
        self.step_count += 1
        step_lr = self.lr if lr is None else float(lr)
        for p, m, v in zip(params, self.m, self.v):
            if m.shape != p.value.shape:
                raise StateError(f"moment shape mismatch for {p.name}")
            _kernels.adam_update(
                p.value.ravel(), p.grad.ravel(), m.ravel(), v.ravel(),
                self.step_count, step_lr, self.beta1, self.beta2, self.eps,
            )


def adam_step(params: list[Param], state: AdamState, lr: float | None = None) -> None:
    state.step(params, lr)


@dataclass(frozen=True)
class TimeEmbedding:
    """Sinusoidal timestep featurization: dim/2 (sin, cos) pairs on a geometric
    frequency ladder from 1 down to 1/base."""

    dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2 != 0:
            raise ConfigError(f"embedding dimension must be even and >= 2, got {self.dim}")
        if self.base <= 0:
            raise ConfigError("frequency base must be positive")


def sinusoidal_embed_batch(taus, emb: TimeEmbedding) -> np.ndarray:
    """Embeddings for an integer array of timesteps; rows interleave sin/cos."""
    taus = np.asarray(taus, dtype=np.float64).reshape(-1)
    half = emb.dim // 2
    freqs = emb.base ** (-2.0 * np.arange(half) / emb.dim)
    angles = taus[:, None] * freqs[None, :]
    out = np.empty((taus.shape[0], emb.dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def sinusoidal_embed(tau: int, emb: TimeEmbedding) -> np.ndarray:
    return sinusoidal_embed_batch([tau], emb)[0]
