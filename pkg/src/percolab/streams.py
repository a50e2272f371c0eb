"""Address-keyed counter-based random streams.

Every random draw is a pure function of ``(seed, level, coords, stream,
counter)`` built from the splitmix64 finalizer, so a cube's randomness does
not depend on traversal order, chunking or the number of worker processes.
All functions operate on numpy ``uint64`` arrays and broadcast.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_AXIS = _U64(0xD6E8FEB86659FD93)
_LEVEL = _U64(0xA0761D6478BD642F)
_STREAM = _U64(0xE7037ED1A0B428DB)
_REPLICA = _U64(0x8EBC6AF09C88C6E3)
_ATTEMPT = _U64(0x589965CC75374CC3)

# stream ids
RETAIN = 1
COUNT = 2
PLACE = 3
SURVIVE = 4
POINTS = 5

_MASK = (1 << 64) - 1


def mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64."""
    z = np.asarray(z, dtype=_U64)
    with np.errstate(over="ignore"):
        z = z ^ (z >> _U64(30))
        z = z * _M1
        z = z ^ (z >> _U64(27))
        z = z * _M2
        return z ^ (z >> _U64(31))


def mix_int(value: int) -> int:
    return int(mix(np.array([value & _MASK], dtype=_U64))[0])


def replica_seeds(master: int, indices) -> np.ndarray:
    """Per-replica seeds derived from a master seed and replica indices."""
    idx = np.asarray(indices, dtype=_U64)
    with np.errstate(over="ignore"):
        return mix(_U64(master & _MASK) ^ mix(idx * _REPLICA + _GOLDEN))


def attempt_seeds(seeds: np.ndarray, attempt: int) -> np.ndarray:
    """Seeds for the ``attempt``-th rejection round; attempt 0 is the seed itself."""
    seeds = np.asarray(seeds, dtype=_U64)
    if attempt == 0:
        return seeds.copy()
    with np.errstate(over="ignore"):
        return mix(seeds ^ mix(np.array([attempt], dtype=_U64) * _ATTEMPT + _GOLDEN))


def cube_keys(seeds: np.ndarray, level: int, coords: np.ndarray, stream: int) -> np.ndarray:
    """Hash ``(seed, level, coords, stream)``; ``seeds`` broadcasts against ``coords[..., 0]``."""
    coords = np.asarray(coords)
    with np.errstate(over="ignore"):
        salt = mix(np.array([level], dtype=_U64) * _LEVEL + np.array([stream], dtype=_U64) * _STREAM)
        h = mix(np.asarray(seeds, dtype=_U64) ^ salt)
        for i in range(coords.shape[-1]):
            c = coords[..., i].astype(_U64)
            h = mix(h + c * _AXIS + _U64(((i + 1) * 0x9E3779B97F4A7C15) & _MASK))
    return h


def uniforms(keys: np.ndarray, counter=0) -> np.ndarray:
    """Doubles in [0, 1) from keyed counters."""
    ctr = np.asarray(counter, dtype=_U64)
    with np.errstate(over="ignore"):
        z = mix(np.asarray(keys, dtype=_U64) + (ctr + _U64(1)) * _GOLDEN)
    return (z >> _U64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
