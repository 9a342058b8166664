"""Deterministic parameter initialisation."""
from __future__ import annotations

import zlib

import numpy as np

SCHEMES = ("fan_in_uniform", "zeros", "ones")


def param_seed(base_seed: int, name: str) -> int:
    """Stable per-parameter seed so adding a layer never reshuffles the others."""
    return (int(base_seed) * 1_000_003 + zlib.crc32(name.encode())) % 2**32


def init_param(shape, scheme: str = "fan_in_uniform", seed: int = 0) -> np.ndarray:
    """Identical (scheme, seed, shape) always yields bit-identical values.

    ``fan_in_uniform`` draws U(-sqrt(1/fan_in), sqrt(1/fan_in)) with fan_in the
    product of all but the leading extent.
    """
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        return np.zeros(shape, np.float32)
    if scheme == "ones":
        return np.ones(shape, np.float32)
    if scheme != "fan_in_uniform":
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {SCHEMES}")
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    bound = np.sqrt(1.0 / fan_in)
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
