"""Counter-based keyed random numbers.

Every draw is a pure function of ``(seed, stream, *keys)`` so that the value
attached to a node id or an unordered pair of ids does not depend on which
other ids are present.  Mixing uses the splitmix64 finalizer applied once per
key word; all arithmetic is vectorized over numpy ``uint64`` arrays.
"""
from __future__ import annotations

import zlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S12 = np.uint64(12)
_MASK = (1 << 64) - 1


def _mix(h):
    h = h + _GOLDEN
    h = (h ^ (h >> _S30)) * _M1
    h = (h ^ (h >> _S27)) * _M2
    return h ^ (h >> _S31)


def stream_id(name: str) -> int:
    """Stable 64-bit tag for a named substream."""
    return zlib.crc32(name.encode()) | (zlib.adler32(name.encode()) << 32)


def hash_keys(seed: int, stream: str, *keys) -> np.ndarray:
    """64-bit hash of ``(seed, stream, keys...)``; keys broadcast as arrays."""
    with np.errstate(over="ignore"):
        h = _mix(np.array([seed & _MASK], dtype=np.uint64))
        h = _mix(h ^ np.uint64(stream_id(stream)))
        for k in keys:
            k = np.asarray(k)
            if k.dtype != np.uint64:
                k = k.astype(np.int64).astype(np.uint64)
            h = _mix(h ^ k)
    return h


def uniform(seed: int, stream: str, *keys) -> np.ndarray:
    """Uniform draws on the open interval (0, 1), midpoints of a 2^-52 grid."""
    h = hash_keys(seed, stream, *keys)
    return ((h >> _S12).astype(np.float64) + 0.5) * 2.0**-52


# extreme values ``uniform`` can return (both exactly representable); used to
# bound shock tails exactly
U_MAX = ((2**52 - 1) + 0.5) * 2.0**-52
U_MIN = 0.5 * 2.0**-52


def derive_seed(seed: int, stream: str, *keys) -> int:
    """Child seed for an independent replication or subsystem."""
    return int(hash_keys(seed, stream, *keys)[0])


def generator(seed: int, stream: str, *keys) -> np.random.Generator:
    """A numpy Generator seeded from a keyed hash, for sequential simulation."""
    return np.random.Generator(np.random.Philox(derive_seed(seed, stream, *keys)))
