"""Deterministic named RNG substreams.

One root seed fans out into independent generators keyed by (name, index).
The key is a counter-based split of the seed sequence, so adding a new
consumer name never perturbs the draws of existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

# stream names used by the pipeline; new consumers just pick a fresh name
DATASET = "dataset"
INIT = "init"
TRAINING = "training"
SAMPLING = "sampling"
SUBSAMPLE = "subsample"
EVAL_REFERENCE = "eval-reference"


def substream(root_seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Generator for the (name, index) substream of ``root_seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(key, int(index)))
    return np.random.default_rng(seq)
