"""Deterministic random substreams.

Every random quantity in the package is drawn from a
``numpy.random.Generator`` backed by PCG64.  Substreams are addressed by
``(seed, tag)`` so adding a new consumer never shifts existing draws.
"""
import hashlib

import numpy as np

GENERATOR_NAME = "numpy.random.Generator(PCG64).standard_normal"


def derive_seed(seed: int, tag: str) -> int:
    """Map ``(seed, tag)`` to a 32-bit seed via SHA-256."""
    digest = hashlib.sha256(f"{int(seed)}/{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def make_rng(seed: int, tag: str | None = None) -> np.random.Generator:
    if tag is not None:
        seed = derive_seed(seed, tag)
    return np.random.default_rng(seed)


def generator_record() -> dict:
    return {
        "generator": GENERATOR_NAME,
        "numpy_version": np.__version__,
        "substreams": "sha256('<seed>/<tag>')[:4] little-endian -> u32 seed",
    }
