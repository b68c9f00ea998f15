"""Named random substreams derived from one integer seed."""

import zlib

import numpy as np


def substream(seed, *names):
    """Return a Generator keyed by ``seed`` and a path of string names.

    The same (seed, names) pair always yields the same stream, and streams
    with different names are statistically independent.
    """
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def subseed(seed, *names):
    """Derive a child integer seed (uint32) from ``seed`` and names."""
    return int(substream(seed, *names).integers(0, 2**32 - 1, dtype=np.uint64))
