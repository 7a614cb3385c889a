"""Named, independent random substreams derived from one top-level seed."""

import zlib

import numpy as np


def substream_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))


def rng(seed: int, name: str) -> np.random.Generator:
    """PCG64 generator for substream ``name`` of ``seed``."""
    return np.random.default_rng(substream_seed(seed, name))


def counter_rng(seed: int, name: str) -> np.random.Generator:
    """Counter-based (Philox) generator; draws depend only on position in the stream."""
    return np.random.Generator(np.random.Philox(substream_seed(seed, name)))
