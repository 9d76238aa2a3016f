"""Explicitly keyed random streams.

Every stochastic routine in the package takes a ``numpy.random.Generator``
argument. Streams are built from a 64-bit seed plus an integer key path on
top of the Philox counter-based bit generator, so independent trial blocks
can be drawn in any order, on any number of workers, and still reproduce the
serial result.
"""

from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return the generator for ``seed`` refined by the key path ``keys``.

    ``stream(s, b)`` and ``stream(s, b')`` are statistically independent for
    ``b != b'``; the same arguments always give the same stream.
    """
    if seed < 0 or seed > SEED_MASK:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if any(k < 0 for k in keys):
        raise ValueError(f"stream keys must be non-negative, got {keys}")
    seq = np.random.SeedSequence(seed, spawn_key=tuple(keys))
    return np.random.Generator(np.random.Philox(seq))
