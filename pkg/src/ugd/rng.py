"""Deterministic RNG substreams.

Every stochastic routine in the package draws from a generator keyed by
(seed, *path) so that repeated invocation is bit-identical and parallel
workers can derive independent streams without sharing state.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep substream key spaces disjoint.
TAG_DATASET = 1
TAG_EPISODE = 2
TAG_MISSING = 3
TAG_ANCHOR = 4
TAG_INIT = 5
TAG_SUBSET = 6
TAG_PIPELINE = 7


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for (seed, path), stable across platforms."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(p) for p in path]]))


def key_of(seed: int, *path: int) -> int:
    """Stable 64-bit key derived from (seed, path), usable as a child seed."""
    state = np.random.SeedSequence([int(seed), *[int(p) for p in path]]).generate_state(2)
    return (int(state[0]) << 32) | int(state[1])
