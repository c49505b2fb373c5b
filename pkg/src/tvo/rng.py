"""Seed derivation: every random stream is keyed by (seed, component name, block).

Streams use the counter-based Philox generator, so a block's draws depend
only on its key and never on how blocks are scheduled across workers.
"""
from __future__ import annotations

import hashlib

import numpy as np


def component_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def seed_sequence(seed: int, component: str, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(component_key(component), *map(int, extra)))


def generator(seed: int, component: str, *extra: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(seed, component, *extra)))
