"""Run configuration: parsing, validation, canonical serialization.

Accepted sources are a flat ``key=value`` file or a flat JSON object, plus
command-line overrides; keys use dotted paths (``train.epochs``).  Parsing is
fail-closed: unknown keys, type mismatches, and keys that do not apply to the
selected method are errors, never silently ignored.  Every run is fully
reproducible from its serialized config (defaults included).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError

ENVIRONMENTS = ("claw", "gridworld")
DIFFUSION_METHODS = ("diffusion_bc", "diffusion_x", "diffusion_kde")
BASELINE_METHODS = ("mse", "discretised", "kmeans", "kmeans_residual")
METHODS = DIFFUSION_METHODS + BASELINE_METHODS
ARCHITECTURES = ("basic_mlp", "mlp_sieve")


@dataclass(frozen=True)
class DataSettings:
    n: int
    history: int


@dataclass(frozen=True)
class ScheduleSettings:
    steps: int
    beta_min: float
    beta_max: float


@dataclass(frozen=True)
class TrainSettings:
    epochs: int
    batch_size: int
    learning_rate: float


@dataclass(frozen=True)
class ModelSettings:
    hidden: int
    depth: int
    emb_dim: int


@dataclass(frozen=True)
class GuidanceSettings:
    weight: float
    dropout: float


@dataclass(frozen=True)
class SamplerSettings:
    extra_steps: int
    kde_samples: int
    kde_width: float


@dataclass(frozen=True)
class HeadSettings:
    kmeans_clusters: int
    discretised_bins: int


@dataclass(frozen=True)
class EvalSettings:
    knn_k: int
    emd_cap: int
    samples: int


@dataclass(frozen=True)
class RunConfig:
    environment: str
    method: str
    architecture: str
    seed: int
    out_dir: str
    data: DataSettings
    schedule: ScheduleSettings
    train: TrainSettings
    model: ModelSettings
    guidance: GuidanceSettings
    sampler: SamplerSettings
    heads: HeadSettings
    eval: EvalSettings

    def is_diffusion(self) -> bool:
        return self.method in DIFFUSION_METHODS


def _is_diffusion(method: str) -> bool:
    return method in DIFFUSION_METHODS


# key -> (section, attr, type, default(environment, method), relevant(method))
_ALWAYS = lambda method: True  # noqa: E731


def _default_n(env, method):
    return 20000 if env == "claw" else 10000


def _default_extra(env, method):
    return 8 if method == "diffusion_x" else 0


FIELDS: dict[str, tuple] = {
    "environment": (None, "environment", "str", None, _ALWAYS),
    "method": (None, "method", "str", lambda e, m: "diffusion_bc", _ALWAYS),
    "architecture": (None, "architecture", "str", lambda e, m: "basic_mlp", _ALWAYS),
    "seed": (None, "seed", "int", lambda e, m: 0, _ALWAYS),
    "out_dir": (None, "out_dir", "str", lambda e, m: "run-out", _ALWAYS),
    "data.n": ("data", "n", "int", _default_n, _ALWAYS),
    "data.history": ("data", "history", "int", lambda e, m: 1, _ALWAYS),
    "schedule.steps": ("schedule", "steps", "int", lambda e, m: 50, _is_diffusion),
    "schedule.beta_min": ("schedule", "beta_min", "float", lambda e, m: 1e-4, _is_diffusion),
    "schedule.beta_max": ("schedule", "beta_max", "float", lambda e, m: 0.02, _is_diffusion),
    "train.epochs": ("train", "epochs", "int", lambda e, m: 100, _ALWAYS),
    "train.batch_size": ("train", "batch_size", "int", lambda e, m: 32, _ALWAYS),
    "train.learning_rate": ("train", "learning_rate", "float", lambda e, m: 1e-4, _ALWAYS),
    "model.hidden": ("model", "hidden", "int", lambda e, m: 512, _ALWAYS),
    "model.depth": ("model", "depth", "int", lambda e, m: 3, _ALWAYS),
    "model.emb_dim": ("model", "emb_dim", "int", lambda e, m: 128, _is_diffusion),
    "guidance.weight": ("guidance", "weight", "float", lambda e, m: 0.0, _is_diffusion),
    "guidance.dropout": ("guidance", "dropout", "float", lambda e, m: 0.1, _is_diffusion),
    "sampler.extra_steps": ("sampler", "extra_steps", "int", _default_extra, _is_diffusion),
    "sampler.kde_samples": ("sampler", "kde_samples", "int", lambda e, m: 100, _is_diffusion),
    "sampler.kde_width": ("sampler", "kde_width", "float", lambda e, m: 0.4, _is_diffusion),
    "kmeans.clusters": ("heads", "kmeans_clusters", "int", lambda e, m: 10,
                        lambda m: m in ("kmeans", "kmeans_residual")),
    "discretised.bins": ("heads", "discretised_bins", "int", lambda e, m: 20,
                         lambda m: m == "discretised"),
    "eval.knn_k": ("eval", "knn_k", "int", lambda e, m: 10, _ALWAYS),
    "eval.emd_cap": ("eval", "emd_cap", "int", lambda e, m: 2000, _ALWAYS),
    "eval.samples": ("eval", "samples", "int", lambda e, m: 1000, _ALWAYS),
}

_SECTIONS = {
    "data": DataSettings,
    "schedule": ScheduleSettings,
    "train": TrainSettings,
    "model": ModelSettings,
    "guidance": GuidanceSettings,
    "sampler": SamplerSettings,
    "heads": HeadSettings,
    "eval": EvalSettings,
}


def _coerce(key: str, kind: str, value):
    try:
        if kind == "int":
            if isinstance(value, bool):
                raise ValueError
            if isinstance(value, int):
                return value
            if isinstance(value, float):
                if value != int(value):
                    raise ValueError
                return int(value)
            return int(str(value).strip())
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            if isinstance(value, (int, float)):
                return float(value)
            return float(str(value).strip())
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {kind}") from None


def _read_file(path) -> dict:
    try:
        text = open(path, "r", encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    stripped = text.strip()
    if not stripped:
        return {}
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")
        return obj
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from an optional file plus overrides.

    Overrides win over file values; both count as explicitly set for the
    purpose of rejecting keys that do not apply to the selected method.
    """
    raw: dict = {}
    if path is not None:
        raw.update(_read_file(path))
    for key, value in (overrides or {}).items():
        raw[key] = value

    unknown = sorted(set(raw) - set(FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")

    if "environment" not in raw:
        raise ConfigError("config key 'environment' is required")
    environment = _coerce("environment", "str", raw["environment"])
    if environment not in ENVIRONMENTS:
        raise ConfigError(f"environment must be one of {ENVIRONMENTS}, got {environment!r}")
    method = _coerce("method", "str", raw.get("method", "diffusion_bc"))
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")

    values: dict[str, object] = {}
    for key, (section, attr, kind, default, relevant) in FIELDS.items():
        if key in raw:
            if not relevant(method):
                raise ConfigError(f"config key {key!r} does not apply to method {method!r}")
            values[key] = _coerce(key, kind, raw[key])
        else:
            values[key] = default(environment, method)

    sections = {}
    for name, cls in _SECTIONS.items():
        kwargs = {attr: values[key] for key, (sec, attr, *_rest) in FIELDS.items() if sec == name}
        sections[name] = cls(**kwargs)
    cfg = RunConfig(
        environment=environment,
        method=method,
        architecture=values["architecture"],
        seed=values["seed"],
        out_dir=values["out_dir"],
        **sections,
    )
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    def fail(key, msg):
        raise ConfigError(f"config key {key!r}: {msg}")

    if cfg.architecture not in ARCHITECTURES:
        fail("architecture", f"must be one of {ARCHITECTURES}")
    if cfg.method in BASELINE_METHODS and cfg.architecture != "basic_mlp":
        fail("architecture", "baseline methods use a plain MLP trunk (basic_mlp)")
    if cfg.data.n < 1:
        fail("data.n", "must be >= 1")
    if cfg.data.history < 1:
        fail("data.history", "must be >= 1")
    if cfg.schedule.steps < 1:
        fail("schedule.steps", "must be >= 1")
    if not 0.0 < cfg.schedule.beta_min <= cfg.schedule.beta_max < 1.0:
        fail("schedule.beta_min", "endpoints must satisfy 0 < min <= max < 1")
    if cfg.schedule.steps > 1 and cfg.schedule.beta_min == cfg.schedule.beta_max:
        fail("schedule.beta_max", "must exceed beta_min when steps > 1")
    if cfg.train.epochs < 1:
        fail("train.epochs", "must be >= 1")
    if cfg.train.batch_size < 1:
        fail("train.batch_size", "must be >= 1")
    if cfg.train.learning_rate <= 0:
        fail("train.learning_rate", "must be positive")
    if cfg.model.hidden < 1:
        fail("model.hidden", "must be >= 1")
    if cfg.model.depth < 1:
        fail("model.depth", "must be >= 1")
    if cfg.model.emb_dim < 2 or cfg.model.emb_dim % 2 != 0:
        fail("model.emb_dim", "must be an even integer >= 2")
    if cfg.guidance.weight < 0:
        fail("guidance.weight", "must be >= 0")
    if not 0.0 <= cfg.guidance.dropout <= 1.0:
        fail("guidance.dropout", "must be in [0, 1]")
    if cfg.method == "diffusion_x" and cfg.sampler.extra_steps < 1:
        fail("sampler.extra_steps", "diffusion_x requires extra_steps >= 1")
    if cfg.method in ("diffusion_bc", "diffusion_kde") and cfg.sampler.extra_steps != 0:
        fail("sampler.extra_steps", f"{cfg.method} forces extra_steps = 0")
    if cfg.sampler.kde_samples < 1:
        fail("sampler.kde_samples", "must be >= 1")
    if cfg.sampler.kde_width <= 0:
        fail("sampler.kde_width", "must be positive")
    if cfg.heads.kmeans_clusters < 1:
        fail("kmeans.clusters", "must be >= 1")
    if cfg.heads.kmeans_clusters > cfg.data.n:
        fail("kmeans.clusters", "cannot exceed the dataset size")
    if cfg.heads.discretised_bins < 2:
        fail("discretised.bins", "must be >= 2")
    if cfg.eval.knn_k < 1:
        fail("eval.knn_k", "must be >= 1")
    if cfg.eval.emd_cap < 2:
        fail("eval.emd_cap", "must be >= 2")
    if cfg.eval.samples < 0:
        fail("eval.samples", "must be >= 0")


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical key=value text: every key relevant to the method, sorted.

    Parsing the result reproduces an equal RunConfig.
    """
    lines = []
    for key, (section, attr, _kind, _default, relevant) in sorted(FIELDS.items()):
        if not relevant(cfg.method):
            continue
        holder = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key}={_format_value(getattr(holder, attr))}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()
