"""Named, reproducible random streams.

Every source of randomness in a run is a ``numpy.random.Generator`` derived
from the experiment seed plus a tuple of integer keys, so the draws a client
makes in round ``r`` never depend on what any other client or stage consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

# stage tags; stable integers so streams survive refactors
INIT = 1
DATA = 2
KA = 3
TN_REAL = 4
TN_SYN = 5
WARMUP = 6
FEAT_KA = 7
GAN_UPDATE = 8
PARTITION = 9
EVAL = 10
MND = 11


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def stream(seed: int, *keys) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``.

    Keys may be ints or strings; strings are hashed with CRC32 so the mapping
    is stable across interpreter runs (unlike ``hash``).
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [_key(k) & 0xFFFFFFFF for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
