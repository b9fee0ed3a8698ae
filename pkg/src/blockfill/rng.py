"""Seeded counter-based streams; each (seed, key...) tuple gets its own independent stream."""
import hashlib

import numpy as np


def stream(seed: int, *keys) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_word(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def _word(key):
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *keys) -> int:
    """Stable 63-bit seed for a sub-task, e.g. one sweep trial."""
    payload = ":".join(str(k) for k in (seed,) + keys).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little") >> 1
