"""Classical behaviour-cloning heads with a shared MLP trunk.

Four modelling choices, all trained on normalized actions:

* ``mse``              — point estimate, squared-error objective;
* ``discretised``      — each action dimension independently binned and
                         trained as per-dimension classification; sampling
                         draws each dimension's bin separately, so the joint
                         structure is the product of the marginals;
* ``kmeans``           — joint clustering of the action set, classification
                         over clusters, sampling returns a centroid;
* ``kmeans_residual``  — as ``kmeans`` plus an observation-dependent
                         per-centroid residual trained with squared error.

Each model is a single network whose last layer is wide enough for the
method's heads; slices of the output act as the separate heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from ._kernels import pairwise_sqdist
from .diffusion import cosine_lr
from .envs import NormStats
from .errors import ConfigError, ShapeError, TrainingError
from .nnet import AdamState, Layer, MlpCache, MlpModel, init_mlp

KINDS = ("mse", "discretised", "kmeans", "kmeans_residual")


@dataclass
class Centroids:
    """Cluster centers plus how many points each one absorbed."""

    points: np.ndarray  # (k, d)
    counts: np.ndarray  # (k,)

    def __post_init__(self):
        if self.points.shape[0] != self.counts.shape[0]:
            raise ShapeError("centroid and count lengths differ")
        if not np.isfinite(self.points).all():
            raise TrainingError("non-finite centroid")


def _plus_plus_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, then squared-distance weighted."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = pairwise_sqdist(points, centers[0:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = points[rng.integers(n)]
        else:
            u = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            centers[j] = points[min(idx, n - 1)]
        d2 = np.minimum(d2, pairwise_sqdist(points, centers[j : j + 1])[:, 0])
    return centers


def kmeans_fit(actions: np.ndarray, k: int, rng: np.random.Generator,
               max_iter: int = 100) -> Centroids:
    """Lloyd's iterations from a k-means++ seed until the assignment is a
    fixpoint (or the iteration cap).  An emptied cluster is re-seeded at the
    point currently farthest from its assigned centroid.  Within-cluster
    squared distortion is checked to be non-increasing every iteration."""
    actions = np.asarray(actions, dtype=np.float64)
    n = actions.shape[0]
    if k < 1:
        raise ConfigError("cluster count must be >= 1")
    if n < k:
        raise ConfigError(f"need at least k={k} points, got {n}")
    centers = _plus_plus_seed(actions, k, rng)
    prev_labels = None
    prev_distortion = np.inf
    for _ in range(max_iter):
        d2 = pairwise_sqdist(actions, centers)
        labels = d2.argmin(axis=1)
        distortion = d2[np.arange(n), labels].sum()
        if distortion > prev_distortion * (1.0 + 1e-9) + 1e-12:
            raise TrainingError("clustering distortion increased")
        prev_distortion = distortion
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels
        nearest = d2[np.arange(n), labels]
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = actions[members].mean(axis=0)
            else:
                far = int(np.argmax(nearest))
                centers[j] = actions[far]
                labels[far] = j
                nearest = nearest.copy()
                nearest[far] = 0.0
    counts = np.bincount(labels, minlength=k)
    return Centroids(centers, counts)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def uniform_bin_edges(act_dim: int, bins: int) -> np.ndarray:
    """(act_dim, bins+1) strictly increasing edges covering the normalized
    action range [-1, 1]."""
    return np.tile(np.linspace(-1.0, 1.0, bins + 1), (act_dim, 1))


def bin_labels(actions_norm: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Per-dimension bin index of each normalized action."""
    n, d = actions_norm.shape
    bins = edges.shape[1] - 1
    labels = np.empty((n, d), dtype=np.int64)
    for j in range(d):
        labels[:, j] = np.clip(
            np.searchsorted(edges[j], actions_norm[:, j], side="right") - 1, 0, bins - 1
        )
    return labels


def bin_centers(edges: np.ndarray) -> np.ndarray:
    return 0.5 * (edges[:, :-1] + edges[:, 1:])


@dataclass
class BaselineModel:
    kind: str
    net: MlpModel
    norm: NormStats
    obs_dim: int
    act_dim: int
    bin_edges: np.ndarray | None = None  # discretised, (d, B+1)
    centroids: np.ndarray | None = None  # kmeans variants, (K, d) normalized

    @property
    def bins(self) -> int:
        return self.bin_edges.shape[1] - 1

    @property
    def clusters(self) -> int:
        return self.centroids.shape[0]


def _head_dim(kind, act_dim, bins, clusters) -> int:
    if kind == "mse":
        return act_dim
    if kind == "discretised":
        return act_dim * bins
    if kind == "kmeans":
        return clusters
    if kind == "kmeans_residual":
        return clusters * (1 + act_dim)
    raise ConfigError(f"unknown baseline kind {kind!r}")


def _loss_and_grad(kind, out, act_norm, model: BaselineModel):
    """Batch loss (mean over rows of per-row summed loss) and d loss / d out."""
    n = out.shape[0]
    if kind == "mse":
        resid = out - act_norm
        return float((resid**2).sum(axis=1).mean()), (2.0 / n) * resid
    if kind == "discretised":
        bins = model.bins
        logits = out.reshape(n, model.act_dim, bins)
        labels = bin_labels(act_norm, model.bin_edges)
        logp = _log_softmax(logits)
        rows = np.arange(n)[:, None]
        dims = np.arange(model.act_dim)[None, :]
        loss = float(-logp[rows, dims, labels].sum(axis=1).mean())
        grad = _softmax(logits)
        np.subtract.at(grad, (rows, dims, labels), 1.0)
        return loss, grad.reshape(n, -1) / n
    if kind in ("kmeans", "kmeans_residual"):
        k = model.clusters
        d2 = pairwise_sqdist(act_norm, model.centroids)
        labels = d2.argmin(axis=1)
        logits = out[:, :k]
        logp = _log_softmax(logits)
        loss = float(-logp[np.arange(n), labels].mean())
        dlogits = _softmax(logits)
        dlogits[np.arange(n), labels] -= 1.0
        grad = np.zeros_like(out)
        grad[:, :k] = dlogits / n
        if kind == "kmeans_residual":
            resid = out[:, k:].reshape(n, k, model.act_dim)
            target = act_norm - model.centroids[labels]
            picked = resid[np.arange(n), labels]
            err = picked - target
            loss += float((err**2).sum(axis=1).mean())
            dres = np.zeros_like(resid)
            dres[np.arange(n), labels] = (2.0 / n) * err
            grad[:, k:] = dres.reshape(n, -1)
        return loss, grad
    raise ConfigError(f"unknown baseline kind {kind!r}")


def train_baseline(kind: str, dataset, *, epochs: int, batch_size: int,
                   learning_rate: float, init_rng, train_rng,
                   clusters: int = 10, bins: int = 20,
                   hidden: int = 512, depth: int = 3) -> tuple:
    """Train one baseline on a demo dataset; returns (model, per-epoch losses)."""
    if kind not in KINDS:
        raise ConfigError(f"unknown baseline kind {kind!r}")
    obs = dataset.observations
    act_norm = dataset.norm.normalize(dataset.actions)
    n, act_dim = act_norm.shape

    bin_edges = uniform_bin_edges(act_dim, bins) if kind == "discretised" else None
    centroids = None
    if kind in ("kmeans", "kmeans_residual"):
        centroids = kmeans_fit(act_norm, clusters, init_rng).points

    sizes = [obs.shape[1]] + [hidden] * depth + [_head_dim(kind, act_dim, bins, clusters)]
    net = init_mlp(sizes, "gelu", init_rng)
    model = BaselineModel(kind, net, dataset.norm, obs.shape[1], act_dim,
                          bin_edges=bin_edges, centroids=centroids)
    opt = AdamState(net.parameters(), lr=learning_rate)

    steps_per_epoch = (n + batch_size - 1) // batch_size
    total_steps = epochs * steps_per_epoch
    losses = []
    step = 0
    for _ in range(epochs):
        perm = train_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            cache = MlpCache()
            out = net.forward(obs[idx], cache)
            loss, grad = _loss_and_grad(kind, out, act_norm[idx], model)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite {kind} loss")
            net.zero_grads()
            net.backward(cache, grad)
            opt.step(net.parameters(), cosine_lr(learning_rate, step, total_steps))
            epoch_loss += loss * len(idx)
            step += 1
        losses.append(epoch_loss / n)
    return model, losses


def _categorical_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row; probs (n, k), u (n,) uniforms."""
    cdf = np.cumsum(probs, axis=1)
    idx = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_baseline_batch(model: BaselineModel, obs, rng: np.random.Generator,
                          n: int) -> np.ndarray:
    """n de-normalized actions for one observation.

    ``mse`` is deterministic and consumes no randomness; the categorical
    heads consume one uniform per draw (per dimension for ``discretised``).
    """
    obs = np.asarray(obs, dtype=np.float64)
    if n == 0:
        return np.zeros((0, model.act_dim))
    out = model.net.forward(obs[None, :] if obs.ndim == 1 else obs)[0]
    if model.kind == "mse":
        return model.norm.denormalize(np.tile(out, (n, 1)))
    if model.kind == "discretised":
        bins = model.bins
        logits = out.reshape(model.act_dim, bins)
        probs = _softmax(logits)
        centers = bin_centers(model.bin_edges)
        u = rng.random((n, model.act_dim))
        picked = np.empty((n, model.act_dim))
        for j in range(model.act_dim):
            idx = _categorical_rows(np.tile(probs[j], (n, 1)), u[:, j])
            picked[:, j] = centers[j, idx]
        return model.norm.denormalize(picked)
    k = model.clusters
    probs = _softmax(out[:k])
    u = rng.random(n)
    idx = _categorical_rows(np.tile(probs, (n, 1)), u)
    actions = model.centroids[idx].copy()
    if model.kind == "kmeans_residual":
        resid = out[k:].reshape(k, model.act_dim)
        actions += resid[idx]
    return model.norm.denormalize(actions)


def sample_baseline(model: BaselineModel, obs, rng: np.random.Generator) -> np.ndarray:
    return sample_baseline_batch(model, obs, rng, 1)[0]


def save_baseline(path, model: BaselineModel, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": model.kind,
        "obs_dim": model.obs_dim,
        "act_dim": model.act_dim,
        "depth": len(model.net.layers) - 1,
        "hidden": model.net.layers[0].out_dim,
        "norm": model.norm.to_meta(),
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = {p.name: p.value for p in model.net.parameters("net.")}
    if model.bin_edges is not None:
        tensors["head.bin_edges"] = model.bin_edges
    if model.centroids is not None:
        tensors["head.centroids"] = model.centroids
    ckpt.save_checkpoint(path, meta, tensors)


def load_baseline(path) -> BaselineModel:
    meta, tensors = ckpt.load_checkpoint(path)
    if meta.get("kind") not in KINDS:
        raise ConfigError(f"{path} is not a baseline checkpoint (kind={meta.get('kind')!r})")
    layers = [Layer(tensors[f"net.layer{i}.w"], tensors[f"net.layer{i}.b"])
              for i in range(meta["depth"] + 1)]
    return BaselineModel(
        meta["kind"], MlpModel(layers, "gelu"), NormStats.from_meta(meta["norm"]),
        meta["obs_dim"], meta["act_dim"],
        bin_edges=tensors.get("head.bin_edges"),
        centroids=tensors.get("head.centroids"),
    )
