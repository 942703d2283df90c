"""Counter-based random number generation.

Every draw is a pure function of (seed, stream, counter), so batches can be
generated in any order, in chunks of any size, or in parallel, and always
reproduce bit-identically.  The generator is the stateless form of
splitmix64: the counter is pushed through the golden-ratio Weyl sequence and
the 64-bit finalizer.  Gaussians come from the inverse normal CDF applied to
the uniform draws, which gives a monotone coupling between uniforms and
normals (useful for common-random-number comparisons).
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# Stream identifiers keep independent uses of the same seed decorrelated.
STREAM_BROWNIAN = 0
STREAM_DEFAULT_TIME = 1
STREAM_PILOT = 2
STREAM_PARAM_INIT = 3
STREAM_SAMPLING = 4
STREAM_JITTER = 5


def _mix(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2^64 by design
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _stream_key(seed: int, stream: int) -> np.uint64:
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        return _mix(s + np.uint64(stream + 1) * _GAMMA)


def uniforms(seed: int, stream: int, counters: np.ndarray) -> np.ndarray:
    """Uniform(0,1) draws indexed by 64-bit counters; strictly inside (0,1)."""
    key = _stream_key(seed, stream)
    c = counters.astype(np.uint64, copy=False)
    with np.errstate(over="ignore"):
        bits = _mix(key + (c + np.uint64(1)) * _GAMMA)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, stream: int, counters: np.ndarray) -> np.ndarray:
    """Standard normal draws via inverse CDF of the uniform stream."""
    return ndtri(uniforms(seed, stream, counters))


def counters_3d(i0: int, n0: int, n1: int, n2: int) -> np.ndarray:
    """Counter block for indices (i0..i0+n0) x (0..n1) x (0..n2)."""
    a = np.arange(i0, i0 + n0, dtype=np.uint64)[:, None, None]
    b = np.arange(n1, dtype=np.uint64)[None, :, None]
    c = np.arange(n2, dtype=np.uint64)[None, None, :]
    return (a * np.uint64(n1) + b) * np.uint64(n2) + c


def derive_seed(seed: int, *indices: int) -> int:
    """Deterministic child seed, e.g. per training iteration or trial."""
    z = _stream_key(seed, 0)
    with np.errstate(over="ignore"):
        for ix in indices:
            z = _mix(z + np.uint64(ix & 0xFFFFFFFFFFFFFFFF) * _GAMMA + _GAMMA)
    return int(z)
