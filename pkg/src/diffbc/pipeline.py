"""Experiment orchestration behind the CLI: dataset generation, training,
sampling, evaluation, guidance sweeps and figure-data reproduction.

Every run owns its output directory; all randomness flows through named
substreams of the run seed, so identical configs produce byte-identical
dataset, checkpoint, sample and metric files.  Manifests additionally record
wall-clock timings and are therefore excluded from byte-level comparisons.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .baselines import (load_baseline, sample_baseline_batch, save_baseline,
                        train_baseline)
from .checkpoint import file_sha256, load_checkpoint
from .config import (DIFFUSION_METHODS, RunConfig, config_hash, serialize_config)
from .diffusion import build_schedule, load_policy, save_policy, train_diffusion
from .envs import (ClawScene, DemoDataset, GridWorldSpec, claw_observation,
                   decode_gridworld_action, default_claw_scenes,
                   generate_claw_dataset, generate_gridworld_dataset,
                   gridworld_exact_posteriors, gridworld_observation,
                   region_occupancy, N_SCENES, GRID_OBS_DIM, RIGHT, STRAIGHT,
                   FIXTURE_VERSION)
from .errors import ArtifactError, ConfigError
from .metrics import EmpiricalDistribution, density_coverage, emd, in_distribution_rate
from .samplers import GuidanceConfig, SamplerConfig, sample_batch
from ._kernels import BACKEND

TOOLKIT_VERSION = "0.1.0"


# --- conditions -------------------------------------------------------------


def conditions(cfg: RunConfig) -> list[tuple[str, int, np.ndarray]]:
    """(label, id, observation vector) for every conditioning point of the
    run's environment."""
    h = cfg.data.history
    if cfg.environment == "claw":
        return [(f"scene{i}", i, claw_observation(i, h)) for i in range(N_SCENES)]
    return [(f"state{i}", i, gridworld_observation(i, h)) for i in range(GRID_OBS_DIM)]


def generate_dataset(cfg: RunConfig) -> DemoDataset:
    rng = rng_mod.substream(cfg.seed, rng_mod.DATASET)
    if cfg.environment == "claw":
        return generate_claw_dataset(default_claw_scenes(), cfg.data.n, rng,
                                     history=cfg.data.history)
    return generate_gridworld_dataset(GridWorldSpec(), cfg.data.n, rng,
                                      history=cfg.data.history)


def sampler_config(cfg: RunConfig, weight: float | None = None,
                   use_guidance: bool | None = None) -> SamplerConfig:
    w = cfg.guidance.weight if weight is None else weight
    if use_guidance is None:
        use_guidance = w > 0.0
    return SamplerConfig(
        scheme=cfg.method,
        extra_steps=cfg.sampler.extra_steps if cfg.method == "diffusion_x" else 0,
        kde_samples=cfg.sampler.kde_samples,
        kde_width=cfg.sampler.kde_width,
        guidance=GuidanceConfig(weight=w, dropout=cfg.guidance.dropout),
        use_guidance=use_guidance,
    )


# --- manifests --------------------------------------------------------------


def write_manifest(out_dir: Path, name: str, cfg: RunConfig,
                   artifacts: dict[str, Path], timings: dict[str, float]) -> Path:
    entries = {}
    for label, path in artifacts.items():
        path = Path(path)
        entries[label] = {
            "path": str(path.relative_to(out_dir) if path.is_relative_to(out_dir) else path),
            "sha256": file_sha256(path),
            "bytes": path.stat().st_size,
        }
    manifest = {
        "toolkit_version": TOOLKIT_VERSION,
        "fixture_version": FIXTURE_VERSION,
        "kernel_backend": BACKEND,
        "config_hash": config_hash(cfg),
        "config_text": serialize_config(cfg),
        "artifacts": entries,
        "timings_seconds": {k: round(v, 6) for k, v in timings.items()},
    }
    path = out_dir / name
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def verify_manifest_config(manifest_path) -> None:
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    import hashlib

    actual = hashlib.sha256(manifest["config_text"].encode("utf-8")).hexdigest()
    if actual != manifest["config_hash"]:
        raise ArtifactError(f"{manifest_path}: stored config does not match its hash")


# --- train ------------------------------------------------------------------


def train_run(cfg: RunConfig) -> dict:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = {}

    t0 = time.perf_counter()
    dataset = generate_dataset(cfg)
    dataset_path = out_dir / "dataset.bin"
    dataset.save(dataset_path)
    timings["dataset"] = time.perf_counter() - t0

    init_rng = rng_mod.substream(cfg.seed, rng_mod.INIT)
    train_rng = rng_mod.substream(cfg.seed, rng_mod.TRAINING)
    ckpt_path = out_dir / "checkpoint.bin"
    extra_meta = {
        "environment": cfg.environment,
        "history": cfg.data.history,
        "config_hash": config_hash(cfg),
        "toolkit_version": TOOLKIT_VERSION,
    }

    t0 = time.perf_counter()
    if cfg.is_diffusion():
        sched = build_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max)
        policy, losses = train_diffusion(
            dataset, cfg.architecture, sched,
            epochs=cfg.train.epochs, batch_size=cfg.train.batch_size,
            learning_rate=cfg.train.learning_rate, dropout=cfg.guidance.dropout,
            init_rng=init_rng, train_rng=train_rng,
            hidden=cfg.model.hidden, depth=cfg.model.depth, emb_dim=cfg.model.emb_dim,
        )
        save_policy(ckpt_path, policy, extra_meta)
    else:
        model, losses = train_baseline(
            cfg.method, dataset,
            epochs=cfg.train.epochs, batch_size=cfg.train.batch_size,
            learning_rate=cfg.train.learning_rate,
            init_rng=init_rng, train_rng=train_rng,
            clusters=cfg.heads.kmeans_clusters, bins=cfg.heads.discretised_bins,
            hidden=cfg.model.hidden, depth=cfg.model.depth,
        )
        save_baseline(ckpt_path, model, extra_meta)
    timings["train"] = time.perf_counter() - t0

    curve_path = out_dir / "loss_curve.csv"
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss\n")
        for i, loss in enumerate(losses):
            fh.write(f"{i},{loss!r}\n")

    manifest_path = write_manifest(
        out_dir, "manifest.json", cfg,
        {"dataset": dataset_path, "checkpoint": ckpt_path, "loss_curve": curve_path},
        timings,
    )
    return {"dataset": dataset_path, "checkpoint": ckpt_path,
            "loss_curve": curve_path, "manifest": manifest_path}


# --- sample -----------------------------------------------------------------


def load_model(cfg: RunConfig, checkpoint_path):
    """Load either flavour of checkpoint and sanity-check it against the config."""
    meta, _ = load_checkpoint(checkpoint_path)
    kind = meta.get("kind")
    if cfg.is_diffusion():
        if kind != "diffusion":
            raise ConfigError(f"method {cfg.method} needs a diffusion checkpoint, found {kind!r}")
        return load_policy(checkpoint_path)
    if kind != cfg.method:
        raise ConfigError(f"method {cfg.method} needs a matching checkpoint, found {kind!r}")
    return load_baseline(checkpoint_path)


def draw_samples(cfg: RunConfig, model, obs: np.ndarray, n: int,
                 rng: np.random.Generator, weight: float | None = None,
                 use_guidance: bool | None = None) -> np.ndarray:
    if cfg.is_diffusion():
        return sample_batch(model, obs, sampler_config(cfg, weight, use_guidance), rng, n)
    return sample_baseline_batch(model, obs, rng, n)


def write_samples_jsonl(path, actions: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in actions:
            fh.write(json.dumps([float(v) for v in row]))
            fh.write("\n")


def read_samples_jsonl(path) -> np.ndarray:
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    except OSError as exc:
        raise ArtifactError(f"cannot read samples {path}: {exc}") from exc
    if not rows:
        return np.zeros((0, 0))
    return np.asarray(rows, dtype=np.float64)


def sample_run(cfg: RunConfig, checkpoint_path, n: int, out,
               condition: int | None = None) -> dict:
    """Write sample files (one JSON action array per line).

    With a condition id, writes a single file; otherwise one file per
    condition into the ``out`` directory.  Each condition uses its own
    sampling substream, so per-condition results are order-independent.
    """
    model = load_model(cfg, checkpoint_path)
    timings = {}
    t0 = time.perf_counter()
    artifacts = {}
    if condition is not None:
        out = Path(out)
        rng = rng_mod.substream(cfg.seed, rng_mod.SAMPLING, index=condition)
        label, _, obs = conditions(cfg)[condition]
        actions = draw_samples(cfg, model, obs, n, rng)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_samples_jsonl(out, actions)
        artifacts[label] = out
        out_dir = out.parent
    else:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for label, cid, obs in conditions(cfg):
            rng = rng_mod.substream(cfg.seed, rng_mod.SAMPLING, index=cid)
            actions = draw_samples(cfg, model, obs, n, rng)
            path = out_dir / f"samples_{label}.jsonl"
            write_samples_jsonl(path, actions)
            artifacts[label] = path
    timings["sample"] = time.perf_counter() - t0
    manifest = write_manifest(out_dir, "samples_manifest.json", cfg, artifacts, timings)
    return {"files": artifacts, "manifest": manifest}


# --- eval -------------------------------------------------------------------


def eval_reference(cfg: RunConfig, condition: int, n: int) -> np.ndarray:
    """Held-out reference actions for one condition, drawn from the true
    per-observation action distribution on a dedicated substream."""
    rng = rng_mod.substream(cfg.seed, rng_mod.EVAL_REFERENCE, index=condition)
    if cfg.environment == "claw":
        scene = default_claw_scenes()[condition]
        from .envs import sample_demo

        return np.array([sample_demo(scene, rng) for _ in range(n)])
    spec = GridWorldSpec()
    out = np.zeros((n, 3))
    if condition == 1:
        turns = rng.random(n) < spec.p_right
        out[np.arange(n), np.where(turns, RIGHT, STRAIGHT)] = 1.0
    else:
        out[:, STRAIGHT] = 1.0
    return out


def _condition_metrics(cfg: RunConfig, condition: int, samples: np.ndarray,
                       scenes: list[ClawScene] | None) -> dict:
    result = {}
    n = samples.shape[0]
    reference = eval_reference(cfg, condition, max(n, 1))
    sub_rng = rng_mod.substream(cfg.seed, rng_mod.SUBSAMPLE, index=condition)
    if n > 0:
        result["emd"] = emd(
            EmpiricalDistribution.from_points(samples),
            EmpiricalDistribution.from_points(reference),
            cap=cfg.eval.emd_cap, rng=sub_rng,
        )
        if reference.shape[0] > cfg.eval.knn_k:
            dc = density_coverage(reference, samples, k=cfg.eval.knn_k)
            result["density"] = dc.density
            result["coverage"] = dc.coverage
    if cfg.environment == "claw" and n > 0:
        result["in_distribution_rate"] = in_distribution_rate(
            scenes, np.full(n, condition), samples
        )
    if cfg.environment == "gridworld" and condition == 1 and n > 0:
        moves = np.array([decode_gridworld_action(a) for a in samples])
        result["right_rate"] = float((moves == RIGHT).mean())
    return result


def eval_run(cfg: RunConfig, samples, out, condition: int | None = None) -> dict:
    """Metrics for sample files against held-out reference demonstrations.

    ``samples`` is a single file (requires ``condition``) or a directory of
    ``samples_<label>.jsonl`` files from ``sample_run``.
    """
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = default_claw_scenes() if cfg.environment == "claw" else None
    samples = Path(samples)
    per_condition: dict[int, np.ndarray] = {}
    if samples.is_dir():
        for label, cid, _obs in conditions(cfg):
            path = samples / f"samples_{label}.jsonl"
            if path.exists():
                per_condition[cid] = read_samples_jsonl(path)
        if not per_condition:
            raise ArtifactError(f"no samples_*.jsonl files found in {samples}")
    else:
        if condition is None:
            raise ConfigError("evaluating a single sample file requires a condition id")
        per_condition[condition] = read_samples_jsonl(samples)

    t0 = time.perf_counter()
    metrics: dict[str, float] = {}
    labels = {cid: label for label, cid, _ in conditions(cfg)}
    agg: dict[str, list] = {}
    total_rows = []
    for cid, sample_arr in sorted(per_condition.items()):
        cond_result = _condition_metrics(cfg, cid, sample_arr, scenes)
        for key, value in cond_result.items():
            metrics[f"{labels[cid]}/{key}"] = value
            agg.setdefault(key, []).append((value, sample_arr.shape[0]))
        total_rows.append(sample_arr.shape[0])
    for key, pairs in agg.items():
        weights = np.array([w for _, w in pairs], dtype=np.float64)
        values = np.array([v for v, _ in pairs])
        metrics[f"overall/{key}"] = float((values * weights).sum() / weights.sum())
    timings = {"eval": time.perf_counter() - t0}

    json_path = out_dir / "metrics.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({k: metrics[k] for k in sorted(metrics)}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    csv_path = out_dir / "metrics.csv"
    run_id = config_hash(cfg)[:12]
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("run_id,method,metric,value\n")
        for key in sorted(metrics):
            fh.write(f"{run_id},{cfg.method},{key},{metrics[key]!r}\n")
    manifest = write_manifest(out_dir, "metrics_manifest.json", cfg,
                              {"metrics_json": json_path, "metrics_csv": csv_path}, timings)
    return {"metrics": metrics, "json": json_path, "csv": csv_path, "manifest": manifest}


# --- guidance sweep ---------------------------------------------------------


def sweep_stats(cfg: RunConfig, policy, weight: float, n: int) -> dict[str, float]:
    """Environment-specific statistics for one guidance weight, one row per
    (condition, statistic)."""
    stats: dict[str, float] = {}
    scenes = default_claw_scenes() if cfg.environment == "claw" else None
    for label, cid, obs in conditions(cfg):
        rng = rng_mod.substream(cfg.seed, "sweep", index=int(weight * 1000) * 64 + cid)
        actions = sample_batch(
            policy, obs, sampler_config(cfg, weight=weight, use_guidance=True), rng, n
        )
        if cfg.environment == "gridworld":
            moves = np.array([decode_gridworld_action(a) for a in actions])
            stats[f"{label}/right_rate"] = float((moves == RIGHT).mean())
            stats[f"{label}/straight_rate"] = float((moves == STRAIGHT).mean())
        else:
            occupancy = region_occupancy(scenes[cid], actions)
            for ridx, occ in enumerate(occupancy):
                stats[f"{label}/region{ridx}_occupancy"] = float(occ)
            inside = occupancy.sum()
            if inside > 0:
                probs = occupancy / inside
                probs = probs[probs > 0]
                stats[f"{label}/occupancy_entropy"] = float(-(probs * np.log(probs)).sum())
            stats[f"{label}/in_distribution_rate"] = in_distribution_rate(
                scenes, np.full(len(actions), cid), actions
            )
    return stats


def sweep_run(cfg: RunConfig, checkpoint_path, weights: list[float], n: int, out) -> dict | None:
    policy = load_model(cfg, checkpoint_path)
    if not cfg.is_diffusion():
        raise ConfigError("guidance sweeps require a diffusion method")
    if policy.dropout <= 0.0:
        print(
            "warning: checkpoint was trained without conditioning dropout; "
            "the unconditional branch is untrained, refusing to sweep",
            file=sys.stderr,
        )
        return None
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = []
    for w in weights:
        if w < 0:
            raise ConfigError(f"guidance weight must be >= 0, got {w}")
        stats = sweep_stats(cfg, policy, float(w), n)
        for key in sorted(stats):
            rows.append((float(w), key, stats[key]))
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("weight,statistic,value\n")
        for w, key, value in rows:
            fh.write(f"{w!r},{key},{value!r}\n")
    manifest = write_manifest(out.parent, "sweep_manifest.json", cfg, {"sweep": out},
                              {"sweep": time.perf_counter() - t0})
    return {"sweep": out, "manifest": manifest, "rows": rows}


# --- reproduce --------------------------------------------------------------

FIGURES = ("fig1", "fig3", "fig4", "appendixE")


def _scatter_rows(fh, tag: str, scene_label: str, actions: np.ndarray) -> None:
    for x, y in actions:
        fh.write(f"{tag},{scene_label},{x!r},{y!r}\n")


def reproduce(figure: str, out, *, seed: int = 0, demos: int = 20000,
              epochs: int = 100, samples: int = 1000) -> dict:
    """Emit the data behind one of the published claw/grid-world panels as CSV
    (no plotting).  Scale knobs exist so smoke tests can run small."""
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure id {figure!r}; known: {', '.join(FIGURES)}")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    if figure == "appendixE":
        table = gridworld_exact_posteriors(GridWorldSpec())
        path = out_dir / "appendixE_posteriors.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("quantity,value\n")
            for i, p in enumerate(table["p_obs"]):
                fh.write(f"p_obs{i},{p!r}\n")
            for action, p in table["p_action"].items():
                fh.write(f"p_action_{action},{p!r}\n")
            for action, p in table["p_obs1_given_action"].items():
                fh.write(f"p_obs1_given_{action},{p!r}\n")
        cfg = _reproduce_config("gridworld", "diffusion_bc", seed, demos, epochs, out_dir)
        manifest = write_manifest(out_dir, "reproduce_manifest.json", cfg,
                                  {"posteriors": path}, {"reproduce": time.perf_counter() - t0})
        return {"files": {"posteriors": path}, "manifest": manifest}

    methods = {
        "fig1": ["mse", "discretised", "kmeans", "kmeans_residual", "diffusion_bc"],
        "fig3": ["diffusion_bc"],
        "fig4": ["diffusion_bc", "diffusion_x", "diffusion_kde"],
    }[figure]

    files = {}
    path = out_dir / f"{figure}_scatter.csv"
    trained: dict[str, tuple] = {}
    with open(path, "w", encoding="utf-8") as fh:
        if figure == "fig3":
            fh.write("weight,scene,x,y\n")
        else:
            fh.write("method,scene,x,y\n")
        for method in methods:
            train_key = "diffusion" if method in DIFFUSION_METHODS else method
            cfg = _reproduce_config("claw", method, seed, demos, epochs, out_dir)
            if train_key not in trained:
                run_dir = out_dir / f"train_{train_key}"
                base_cfg = cfg if method != "diffusion_x" else _reproduce_config(
                    "claw", "diffusion_bc", seed, demos, epochs, out_dir)
                paths = train_run(_with_out_dir(base_cfg, run_dir))
                trained[train_key] = paths["checkpoint"]
            ckpt_path = trained[train_key]
            model = load_model(cfg, ckpt_path)
            if figure == "fig3":
                for w in (0.0, 1.0, 4.0, 8.0):
                    for label, cid, obs in conditions(cfg):
                        rng = rng_mod.substream(seed, "sweep", index=int(w * 1000) * 64 + cid)
                        acts = sample_batch(model, obs,
                                            sampler_config(cfg, weight=w, use_guidance=True),
                                            rng, samples)
                        _scatter_rows(fh, repr(w), label, acts)
            else:
                for label, cid, obs in conditions(cfg):
                    rng = rng_mod.substream(seed, rng_mod.SAMPLING, index=cid)
                    acts = draw_samples(cfg, model, obs, samples, rng)
                    _scatter_rows(fh, method, label, acts)
    files[figure] = path
    cfg = _reproduce_config("claw", methods[-1], seed, demos, epochs, out_dir)
    manifest = write_manifest(out_dir, "reproduce_manifest.json", cfg, files,
                              {"reproduce": time.perf_counter() - t0})
    return {"files": files, "manifest": manifest}


def _reproduce_config(environment: str, method: str, seed: int, demos: int,
                      epochs: int, out_dir) -> RunConfig:
    from .config import parse_config

    return parse_config(None, {
        "environment": environment,
        "method": method,
        "seed": str(seed),
        "data.n": str(demos),
        "train.epochs": str(epochs),
        "out_dir": str(out_dir),
    })


def _with_out_dir(cfg: RunConfig, out_dir) -> RunConfig:
    from dataclasses import replace

    return replace(cfg, out_dir=str(out_dir))
