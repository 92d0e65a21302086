"""Deterministic seed derivation.

Every stochastic stage derives its own stream from the master seed and a
string key path, e.g. ``derive_seed(master, "term", "speed")``. The scheme is
a splitmix64 walk over the key bytes: platform independent, stable across
runs, and cheap. Derived values are 63-bit non-negative ints so they can be
fed straight into ``numpy.random.PCG64``.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(z: int) -> int:
    """One splitmix64 mixing step (public-domain constants)."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(master: int, *keys: object) -> int:
    """Derive a child seed from ``master`` and a path of keys.

    Keys are rendered with str(); ints and strings are both fine. The result
    is deterministic in (master, keys) and keys of different lengths never
    collide because each key is terminated by a mixing step over a sentinel.
    """
    h = splitmix64(master & _MASK)
    for key in keys:
        for b in str(key).encode("utf-8"):
            h = splitmix64(h ^ b)
        h = splitmix64(h ^ 0xFF)
    return h >> 1  # keep it positive for consumers that want signed ints


def generator(master: int, *keys: object) -> np.random.Generator:
    """numpy Generator seeded from a derived seed."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))
