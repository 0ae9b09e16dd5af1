"""Named random streams derived from a single root seed.

Every consumer of randomness hashes its own stream name together with
the root seed, so adding a new experiment never perturbs the draws of
an existing one.
"""
from __future__ import annotations

import hashlib

import numpy as np


def child_seed(root_seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{root_seed}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(child_seed(root_seed, name))
