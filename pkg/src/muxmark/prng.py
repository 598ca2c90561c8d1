"""Counter-based pseudo-noise generation (SplitMix64).

All keyed randomness in the watermark backends flows through this module so
that a key seed fully determines every chip, bin choice, and dither value,
and so that an implementation in another language can reproduce the streams
bit-for-bit. The generator is the standard SplitMix64 finalizer applied to
``seed + (i + 1) * GAMMA`` for counter ``i``; no state is carried.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

_U64 = np.uint64
_TWO64 = float(2**64)


def _finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _M1
    z = (z ^ (z >> _U64(27))) * _M2
    return z ^ (z >> _U64(31))


def pn_uint64(seed: int, n: int, counter_start: int = 0) -> np.ndarray:
    """n SplitMix64 outputs for counters [counter_start, counter_start + n)."""
    base = _U64(seed % 2**64)
    idx = np.arange(counter_start + 1, counter_start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _finalize(base + idx * GAMMA)


def derive(seed: int, *tags: int) -> int:
    """Fold integer tags into a seed; used for per-purpose subkey derivation."""
    z = _U64(seed % 2**64)
    with np.errstate(over="ignore"):
        for tag in tags:
            z = _finalize((z + _U64(tag % 2**64) * GAMMA).reshape(1))[0]
    return int(z)


def pn_signs(seed: int, n: int) -> np.ndarray:
    """Pseudo-noise chips in {-1.0, +1.0} (top output bit decides the sign)."""
    bits = pn_uint64(seed, n) >> _U64(63)
    return bits.astype(np.float64) * 2.0 - 1.0


def pn_uniform(seed: int, n: int) -> np.ndarray:
    """Uniform floats in [0, 1)."""
    return pn_uint64(seed, n).astype(np.float64) / _TWO64


def pn_choice(seed: int, population: int, k: int) -> np.ndarray:
    """k distinct indices drawn from range(population), keyed Fisher-Yates."""
    if k > population:
        raise ValueError(f"cannot draw {k} distinct values from {population}")
    u = pn_uniform(seed, k)
    pool = np.arange(population)
    for i in range(k):
        j = i + int(u[i] * (population - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k].copy()
