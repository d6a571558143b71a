"""Synthetic evaluation environments.

Two fully synthetic grounds:

* a single-step claw game: the observation is one of seven fixed pictures
  (encoded one-hot) and the demonstrated action is a uniformly drawn point
  inside one of the picture's valid target regions (discs / axis-aligned
  rectangles in the unit square, region chosen proportionally to area);
* a four-state corridor grid-world with a single stochastic decision point,
  whose observation/action posteriors have a closed form, used to analyse
  guided sampling.

The claw fixture geometry is versioned and frozen: changing any region
requires bumping FIXTURE_VERSION so metric histories stay comparable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArtifactError, ConfigError, CorruptArtifactError, ShapeError

FIXTURE_VERSION = 1

N_SCENES = 7
CLAW_OBS_DIM = 7
CLAW_ACT_DIM = 2

# scene roles used by evaluations: scene 1 and 2 are two-mode scenes where the
# per-mode mass is (near-)equal; scene 2's two regions sit on a diagonal so
# per-dimension marginals put mass in the empty opposite corners.
BIMODAL_SCENE_IDS = (1, 2, 6)
DIAGONAL_SCENE_ID = 2


class Disc:
    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def area(self) -> float:
        return np.pi * self.radius**2

    def contains(self, points: np.ndarray) -> np.ndarray:
        d2 = ((points - self.center) ** 2).sum(axis=-1)
        return d2 <= self.radius**2

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lo = self.center - self.radius
        hi = self.center + self.radius
        while True:  # rejection from the bounding box, acceptance ~ pi/4
            p = rng.uniform(lo, hi)
            if ((p - self.center) ** 2).sum() <= self.radius**2:
                return p

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def describe(self) -> dict:
        return {"kind": "disc", "center": self.center.tolist(), "radius": self.radius}


class Rect:
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)

    def area(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.logical_and(points >= self.lo, points <= self.hi).all(axis=-1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi)

    def bounds(self):
        return self.lo, self.hi

    def describe(self) -> dict:
        return {"kind": "rect", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class ClawScene:
    """One picture: a labelled set of valid target regions in [0,1]^2."""

    scene_id: int
    regions: tuple

    def __post_init__(self):
        if not 0 <= self.scene_id < N_SCENES:
            raise ConfigError(f"scene id must be in 0..{N_SCENES - 1}")
        if not self.regions:
            raise ConfigError("a scene needs at least one region")
        for region in self.regions:
            lo, hi = region.bounds()
            if region.area() <= 0.0:
                raise ConfigError("regions must have positive area")
            if (lo < 0.0).any() or (hi > 1.0).any():
                raise ConfigError("regions must lie inside the unit square")

    def region_weights(self) -> np.ndarray:
        areas = np.array([r.area() for r in self.regions])
        return areas / areas.sum()


def default_claw_scenes() -> list[ClawScene]:
    """The frozen seven-scene fixture.

    Layouts span unimodal, two-mode, three-mode and mixed disc/rectangle
    cases.  Scene 2 places two equal squares on a diagonal; scene 6 pairs a
    region shared with scene 1 with a region unique to scene 6.
    """
    return [
        ClawScene(0, (Disc((0.50, 0.68), 0.17),)),
        ClawScene(1, (Disc((0.22, 0.50), 0.13), Disc((0.78, 0.50), 0.13))),
        ClawScene(2, (Rect((0.08, 0.08), (0.36, 0.36)), Rect((0.64, 0.64), (0.92, 0.92)))),
        ClawScene(3, (Disc((0.20, 0.24), 0.11), Disc((0.50, 0.76), 0.11), Disc((0.80, 0.24), 0.11))),
        ClawScene(4, (Disc((0.70, 0.32), 0.14), Rect((0.12, 0.56), (0.40, 0.88)))),
        ClawScene(5, (Rect((0.42, 0.14), (0.60, 0.86)),)),
        ClawScene(6, (Disc((0.22, 0.50), 0.13), Rect((0.60, 0.20), (0.88, 0.39)))),
    ]


def marginal_product_corner() -> Rect:
    """Probe box for the diagonal scene: the product of the two regions'
    disjoint coordinate bands, entirely outside the true distribution."""
    return Rect((0.64, 0.08), (0.92, 0.36))


def in_region(scene: ClawScene, action) -> bool:
    """Exact membership of a single action in any of the scene's regions."""
    a = np.asarray(action, dtype=np.float64)
    return bool(any(r.contains(a) for r in scene.regions))


def in_region_batch(scene: ClawScene, actions: np.ndarray) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.float64)
    hits = np.zeros(actions.shape[0], dtype=bool)
    for region in scene.regions:
        hits |= region.contains(actions)
    return hits


def region_occupancy(scene: ClawScene, actions: np.ndarray) -> np.ndarray:
    """Fraction of actions inside each region (overlaps count for both)."""
    actions = np.asarray(actions, dtype=np.float64)
    return np.array([region.contains(actions).mean() for region in scene.regions])


def sample_demo(scene: ClawScene, rng: np.random.Generator) -> np.ndarray:
    """Draw one valid action: region chosen with probability proportional to
    area, then a uniform point inside it."""
    weights = scene.region_weights()
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(weights), u, side="right"))
    idx = min(idx, len(scene.regions) - 1)
    return scene.regions[idx].sample(rng)


@dataclass(frozen=True)
class NormStats:
    """Per-dimension action bounds used to map actions to [-1, 1] and back.

    A constant dimension (hi == lo) maps to 0 and back to its constant value.
    """

    lo: np.ndarray
    hi: np.ndarray

    def normalize(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64)
        span = self.hi - self.lo
        safe = np.where(span > 0.0, span, 1.0)
        out = 2.0 * (actions - self.lo) / safe - 1.0
        return np.where(span > 0.0, out, 0.0)

    def denormalize(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64)
        span = self.hi - self.lo
        out = self.lo + 0.5 * (actions + 1.0) * span
        return np.where(span > 0.0, out, self.lo)

    def to_meta(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_meta(cls, meta: dict) -> "NormStats":
        return cls(np.asarray(meta["lo"], dtype=np.float64),
                   np.asarray(meta["hi"], dtype=np.float64))


DATASET_MAGIC = b"DBC1DATA"
DATASET_VERSION = 1


@dataclass
class DemoDataset:
    """Aligned observation/action arrays plus the action normalization stats."""

    observations: np.ndarray  # (n, obs_dim)
    actions: np.ndarray  # (n, act_dim)
    norm: NormStats

    def __post_init__(self):
        if self.observations.shape[0] != self.actions.shape[0]:
            raise ShapeError("observation and action row counts differ")

    def __len__(self) -> int:
        return self.observations.shape[0]

    @classmethod
    def from_arrays(cls, observations, actions) -> "DemoDataset":
        observations = np.ascontiguousarray(observations, dtype=np.float64)
        actions = np.ascontiguousarray(actions, dtype=np.float64)
        norm = NormStats(lo=actions.min(axis=0), hi=actions.max(axis=0))
        return cls(observations, actions, norm)

    def save(self, path) -> None:
        n, obs_dim = self.observations.shape
        act_dim = self.actions.shape[1]
        header = DATASET_MAGIC + struct.pack("<IIIQ", DATASET_VERSION, obs_dim, act_dim, n)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.observations.astype("<f8", copy=False).tobytes())
            fh.write(self.actions.astype("<f8", copy=False).tobytes())

    @classmethod
    def load(cls, path) -> "DemoDataset":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise ArtifactError(f"cannot read dataset {path}: {exc}") from exc
        head = len(DATASET_MAGIC) + struct.calcsize("<IIIQ")
        if len(blob) < head or blob[: len(DATASET_MAGIC)] != DATASET_MAGIC:
            raise CorruptArtifactError(f"{path}: not a dataset file")
        version, obs_dim, act_dim, n = struct.unpack(
            "<IIIQ", blob[len(DATASET_MAGIC) : head]
        )
        if version != DATASET_VERSION:
            raise CorruptArtifactError(f"{path}: unsupported dataset version {version}")
        expected = head + 8 * n * (obs_dim + act_dim)
        if len(blob) != expected:
            raise CorruptArtifactError(f"{path}: size mismatch ({len(blob)} != {expected})")
        obs = np.frombuffer(blob, dtype="<f8", count=n * obs_dim, offset=head)
        act = np.frombuffer(blob, dtype="<f8", count=n * act_dim, offset=head + 8 * n * obs_dim)
        return cls.from_arrays(obs.reshape(n, obs_dim), act.reshape(n, act_dim))

    def export_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for obs, act in zip(self.observations, self.actions):
                fh.write(json.dumps({"obs": obs.tolist(), "action": act.tolist()}))
                fh.write("\n")


def _stack_history(frames: list[np.ndarray], index: int, history: int) -> np.ndarray:
    """Frames index-history+1 .. index concatenated, zero-padded before step 0."""
    dim = frames[0].shape[0]
    parts = []
    for back in range(history - 1, -1, -1):
        j = index - back
        parts.append(frames[j] if j >= 0 else np.zeros(dim))
    return np.concatenate(parts)


def generate_claw_dataset(scenes: list[ClawScene], n: int, rng: np.random.Generator,
                          round_robin: bool = False, history: int = 1) -> DemoDataset:
    """n demonstrations: scene uniform over the fixture (or cycled when
    round_robin is set, a test hook), action drawn from the scene's true
    distribution.  Every generated action is in-region by construction."""
    if n < 1:
        raise ConfigError("dataset size must be >= 1")
    n_scenes = len(scenes)
    obs = np.zeros((n, CLAW_OBS_DIM * history), dtype=np.float64)
    act = np.zeros((n, CLAW_ACT_DIM), dtype=np.float64)
    for i in range(n):
        sid = i % n_scenes if round_robin else int(rng.integers(0, n_scenes))
        frame = np.zeros(CLAW_OBS_DIM)
        frame[sid] = 1.0
        obs[i] = _stack_history([frame], 0, history)
        a = sample_demo(scenes[sid], rng)
        if not in_region(scenes[sid], a):
            raise ArtifactError("generated demo fell outside its region set")
        act[i] = a
    return DemoDataset.from_arrays(obs, act)


def scene_of_observation(obs_row: np.ndarray, history: int = 1) -> int:
    """Scene id encoded in the most recent frame of a (possibly stacked) claw
    observation."""
    frame = np.asarray(obs_row)[-CLAW_OBS_DIM:]
    return int(np.argmax(frame))


def claw_observation(scene_id: int, history: int = 1) -> np.ndarray:
    frame = np.zeros(CLAW_OBS_DIM)
    frame[scene_id] = 1.0
    return _stack_history([frame], 0, history)


# --- grid-world -----------------------------------------------------------

GRID_OBS_DIM = 4
GRID_ACT_DIM = 3
GRID_ACTIONS = ("left", "straight", "right")
RIGHT = GRID_ACTIONS.index("right")
STRAIGHT = GRID_ACTIONS.index("straight")


@dataclass(frozen=True)
class GridWorldSpec:
    """Corridor with states {0,1,2,3}: always straight at 0; at 1 turn right
    with probability p_right (ending in 2) else straight (ending in 3);
    always straight at the terminal state.  Rollouts last exactly 2 steps and
    contribute 3 (state, action) rows."""

    p_right: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.p_right < 1.0:
            raise ConfigError("p_right must be strictly inside (0, 1)")


def gridworld_exact_posteriors(spec: GridWorldSpec) -> dict:
    """Closed-form marginals and the decision-point posterior p(o1 | a)."""
    p = spec.p_right
    p_straight = (2.0 + (1.0 - p)) / 3.0
    return {
        "p_obs": [1.0 / 3.0, 1.0 / 3.0, p / 3.0, (1.0 - p) / 3.0],
        "p_action": {"left": 0.0, "straight": p_straight, "right": p / 3.0},
        # left is never demonstrated, so p(o1 | left) conditions on a
        # zero-probability event and is omitted
        "p_obs1_given_action": {"right": 1.0, "straight": (1.0 - p) / (2.0 + (1.0 - p))},
    }


def gridworld_observation(state: int, history: int = 1) -> np.ndarray:
    frame = np.zeros(GRID_OBS_DIM)
    frame[state] = 1.0
    return _stack_history([frame], 0, history)


def generate_gridworld_dataset(spec: GridWorldSpec, n_rollouts: int,
                               rng: np.random.Generator, history: int = 1) -> DemoDataset:
    """Each rollout contributes 3 rows; observations are one-hot states
    (stacked over ``history`` frames), actions one-hot moves as continuous
    targets."""
    if n_rollouts < 1:
        raise ConfigError("rollout count must be >= 1")
    obs = np.zeros((3 * n_rollouts, GRID_OBS_DIM * history), dtype=np.float64)
    act = np.zeros((3 * n_rollouts, GRID_ACT_DIM), dtype=np.float64)
    row = 0
    for _ in range(n_rollouts):
        turn_right = rng.random() < spec.p_right
        states = [0, 1, 2 if turn_right else 3]
        moves = [STRAIGHT, RIGHT if turn_right else STRAIGHT, STRAIGHT]
        frames = []
        for state in states:
            frame = np.zeros(GRID_OBS_DIM)
            frame[state] = 1.0
            frames.append(frame)
        for i in range(3):
            obs[row] = _stack_history(frames, i, history)
            act[row, moves[i]] = 1.0
            row += 1
    return DemoDataset.from_arrays(obs, act)


def decode_gridworld_action(action_vec: np.ndarray) -> int:
    """Continuous 3-vector back to a discrete move index (argmax)."""
    return int(np.argmax(np.asarray(action_vec)))
