"""Named random substreams derived from one master seed.

A substream seed is the first 8 bytes (big endian) of
``sha256(f"{master}:{label}:{index}")``. Every random draw in the package
goes through :func:`rng`, so any component can be replayed from the master
seed and its label alone.
"""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(master: int, label: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(master) & MASK64}:{label}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rng(master: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, label, index))
