"""Named, counter-derived random streams.

Every consumer asks for ``stream(seed, tag, index)``.  The generator depends
only on those three values, so work can be split across processes in any
order without changing results.
"""

from __future__ import annotations

import zlib

import numpy as np

TAGS = ("ic", "sample", "conditional", "truth", "noise", "kernel", "autocorr", "test")


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode())


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag_id(tag), int(index)))
    return np.random.default_rng(ss)
