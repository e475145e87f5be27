"""Seed derivation and the SplitMix64 stream used inside compiled kernels.

SplitMix64 (Steele, Lea & Flood 2014) advances a 64-bit state by the golden
ratio increment and scrambles it:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Uniform doubles take the top 53 bits. ``mix_seed`` folds integers into one
seed through the same steps, so a job's or tree's seed depends only on its
own (master seed, identifiers) and not on what else runs or in what order.
"""

import numba
import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB


def _finalise(z: int) -> int:
    z = ((z ^ (z >> 30)) * _C1) & _MASK
    z = ((z ^ (z >> 27)) * _C2) & _MASK
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    state = 0
    for part in parts:
        state = _finalise((state + _GOLDEN + (int(part) & _MASK)) & _MASK)
    return state


def splitmix64(seed: int, n: int) -> list[int]:
    """First ``n`` outputs of the stream seeded with ``seed`` (reference version)."""
    state = seed & _MASK
    out = []
    for _ in range(n):
        state = (state + _GOLDEN) & _MASK
        out.append(_finalise(state))
    return out


@numba.njit(cache=True)
def sm_next(state):
    """Advance ``state`` (a length-1 uint64 array) and return the next output."""
    state[0] += np.uint64(_GOLDEN)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_C1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_C2)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def sm_uniform(state):
    return float(sm_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def sm_below(state, n):
    """Integer in [0, n)."""
    return int(sm_uniform(state) * n)
