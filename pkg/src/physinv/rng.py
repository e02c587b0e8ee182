"""Deterministic random-stream derivation.

Every random draw in this package flows from an explicit integer seed
through a Philox counter-based generator; nothing reads the wall clock
or OS entropy.  A sub-stream is addressed by a master seed plus a path
of nonnegative integers, combined through numpy's SeedSequence spawn
mechanism:

    stream(seed, 3, 1)  ==  Generator(Philox(SeedSequence(seed, spawn_key=(3, 1))))

Equal (seed, path) pairs produce bit-identical streams on every
platform; distinct paths are statistically independent.  This is the
"split function" referred to throughout the package: dataset sample i
draws its scene from path (i, 0) and its noise from (i, 1), dropout
layer L of a forward pass seeded s draws its mask from stream(s, L),
and so on.  Tests replay these streams to pin exact values.
"""

import numpy as np


def stream(seed, *path):
    """Generator for the sub-stream addressed by ``(seed, *path)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed, *path):
    """Derive an integer child seed for APIs that take a single seed.

    The child is the first uint64 word of the spawned SeedSequence, so
    ``stream(child_seed(s, i))`` is deterministic but distinct from
    ``stream(s, i)``; pick one convention per call site and document it.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])
