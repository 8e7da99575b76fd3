"""Seeded, platform-independent parameter initialisation (SplitMix64 streams)."""

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed, n):
    """First ``n`` outputs of a SplitMix64 generator started at ``seed``."""
    state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        z = state + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform01(seed, n):
    """``n`` doubles in [0, 1) built from the top 53 bits of each SplitMix64 draw."""
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def tensor_seed(seed, name):
    """Derive an independent stream seed for the tensor called ``name``."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def glorot_uniform(seed, name, shape, fan_in, fan_out, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    u = uniform01(tensor_seed(seed, name), int(np.prod(shape)))
    return ((2.0 * u - 1.0) * limit).reshape(shape).astype(dtype)
