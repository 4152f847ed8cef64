"""Deterministic seed derivation for reproducible parallel Monte Carlo.

Every random quantity in an experiment is drawn from a substream addressed
by (base_seed, path_index, stream_tag).  Substreams are materialized as
``numpy.random.SeedSequence`` objects with a structured spawn key, so the
derivation is injective and results never depend on execution order or
worker count.
"""
from __future__ import annotations

import numpy as np

# Stream tags, each with a fixed integer id used in the spawn key.
STREAM_TAGS = {
    "brownian": 0,
    "volatility": 1,
    "policy": 2,
    "permutation": 3,
}


def seed_for_path(base_seed: int, path_index: int, stream_tag: str) -> np.random.SeedSequence:
    """Derive the substream seed for one path and one stream tag.

    Same inputs always give the same seed; distinct (path_index, stream_tag)
    pairs give disjoint streams.
    """
    tag_id = STREAM_TAGS[stream_tag]
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(tag_id, path_index))


def block_stream(base_seed: int, stream_tag: str, block_index: int, chunk_index: int = 0) -> np.random.SeedSequence:
    """Substream keyed by a fixed-size path block instead of a single path.

    Used by the exit-time engine, whose per-path noise consumption is
    data-dependent and therefore vectorized over blocks.  The 3-element
    spawn key cannot collide with the 2-element per-path keys.
    """
    tag_id = STREAM_TAGS[stream_tag]
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(tag_id, block_index, chunk_index))


def generator(seed) -> np.random.Generator:
    """A PCG64 generator from an int, SeedSequence, or existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def state_key(seq: np.random.SeedSequence) -> tuple:
    """128-bit state fingerprint of a seed, for collision checks."""
    return tuple(int(w) for w in seq.generate_state(4, np.uint32))
