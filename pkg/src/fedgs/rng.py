"""Deterministic, splittable random streams.

All randomness in the package flows through named substreams derived from a
single master seed.  A substream is keyed by a path of ints/strings, so two
components can draw independently without sharing generator state, and the
same (seed, path) always reproduces the same stream regardless of call order
or process count.
"""
from __future__ import annotations

import zlib

import numpy as np

_MAX_SEED = 2**63


_STR_TAG = 1 << 32  # crc32 fits below this, so tagged strings cannot alias small ints


def _canon(part) -> int:
    # Strings hash via crc32 so paths stay stable across runs and platforms;
    # the tag bit keeps "1" and 1 on different streams.
    if isinstance(part, str):
        return _STR_TAG | zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part)
    raise TypeError(f"substream path parts must be int or str, got {type(part).__name__}")


def substream(master_seed: int, *path) -> np.random.Generator:
    """Return a Philox generator for the substream named by ``path``.

    The mapping (master_seed, path) -> stream is pure: repeated calls return
    fresh generators positioned at the start of the same stream.  The path
    length is part of the key because SeedSequence treats entropy lists that
    differ only in trailing zeros as identical; without it, ("a",) and
    ("a", 0) would share a stream.
    """
    if not isinstance(master_seed, (int, np.integer)):
        raise TypeError("master_seed must be an int")
    if not (0 <= int(master_seed) < _MAX_SEED):
        raise ValueError(f"master_seed must be in [0, 2**63), got {master_seed}")
    keys = [int(master_seed), len(path)] + [_canon(p) for p in path]
    seq = np.random.SeedSequence(keys)
    return np.random.Generator(np.random.Philox(seq))
