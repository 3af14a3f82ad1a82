from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{name}".encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def generator(seed: int, name: str) -> np.random.Generator:
    """Counter-based Philox stream keyed by (seed, name); platform independent."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, name)))
