import zlib

import numpy as np


def rng_for(seed, stream):
    """Independent counter-based stream keyed by ``(seed, stream name)``."""
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))
