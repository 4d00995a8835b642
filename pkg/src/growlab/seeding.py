"""Scheduling-independent seed derivation.

Every random stream in growlab is keyed by a tuple of labels, e.g.
``(run_seed, task_id, env_index)``. The key is rendered as
``"part0|part1|..."`` (each part via ``str``), hashed with BLAKE2b
(8-byte digest) and read as a little-endian unsigned 64-bit integer.
Streams are then ``numpy.random.Generator(PCG64(seed))``, which is
bit-stable across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Hash ``parts`` into a 64-bit seed."""
    key = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def make_rng(*parts: object) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
