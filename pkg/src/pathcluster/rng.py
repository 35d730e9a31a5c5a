"""Seed derivation.

Every stochastic step draws from a PCG64 generator whose seed is derived from
``(master seed, purpose tag, index...)``, so results do not depend on call
order or worker count.
"""

import zlib

import numpy as np


def _tag_word(tag):
    return zlib.crc32(tag.encode("utf-8")) & 0xFFFFFFFF


def child_seed(seed, tag, *index):
    """Return a 32-bit integer seed for ``(seed, tag, *index)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _tag_word(tag), *[int(i) for i in index]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def child_rng(seed, tag, *index):
    """Return an independent ``numpy.random.Generator`` for ``(seed, tag, *index)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _tag_word(tag), *[int(i) for i in index]])
    return np.random.Generator(np.random.PCG64(ss))
