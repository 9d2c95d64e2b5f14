"""Seeded random streams.

All randomness in the package flows from one master seed through named
substreams, derived statelessly so that any stage (or a resumed run) can
rebuild exactly the generator it needs without carrying mutable RNG state
around.
"""

from __future__ import annotations

import zlib

import numpy as np

_STREAMS = ("data", "init", "sampling", "shuffle", "check")


def substream(seed, name, *indices):
    """Generator for (seed, name, *indices); deterministic and collision-safe
    across the named streams used in this package."""
    tag = zlib.crc32(name.encode("utf-8"))
    key = [int(seed) & 0xFFFFFFFF, tag] + [int(i) & 0xFFFFFFFF for i in indices]
    return np.random.default_rng(np.random.SeedSequence(key))


def stream_names():
    return _STREAMS
