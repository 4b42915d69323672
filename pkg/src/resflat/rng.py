"""SplitMix64 generator and seeded Glorot-uniform initialization.

Everything here works on plain Python ints so results are identical on any
platform; the bulk path used for large weight blocks is a numpy ``uint64``
vectorization of the same recurrence and is checked against the scalar one.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

#: layer index reserved for the dense classifier
CLASSIFIER_INDEX = 1 << 32
#: layer index reserved for the 1x1 input projection
PROJECTION_INDEX = 0


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance the generator once.

    Returns ``(new_state, output)``; the input state is never mutated.
    """
    state = (state + GOLDEN_GAMMA) & MASK64
    return state, _mix(state)


def to_unit(value: int) -> float:
    """Map a 64-bit output onto [0, 1) using its top 53 bits."""
    return (value >> 11) * 2.0**-53


def uniform01(state: int) -> tuple[int, float]:
    state, out = splitmix64_next(state)
    return state, to_unit(out)


def layer_seed(base: int, layer_index: int) -> int:
    """Seed for the layer at ``layer_index`` derived from ``base``.

    Index 0 is the projection, 1..H the residual branches by depth and
    ``CLASSIFIER_INDEX`` the classifier. The seed does not depend on how
    the layers are arranged, so sequential layer h and parallel branch h
    start from the same values.
    """
    if layer_index < 0:
        raise ValueError(f"layer_index must be >= 0, got {layer_index}")
    return (base + (layer_index + 1) * GOLDEN_GAMMA) & MASK64


def splitmix64_stream(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of the generator started at ``seed``, as uint64."""
    if count < 0:
        raise ValueError("count must be >= 0")
    seed &= MASK64
    with np.errstate(over="ignore"):
        steps = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(seed) + steps * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return z


def uniform01_stream(seed: int, count: int) -> np.ndarray:
    return (splitmix64_stream(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_uniform(seed: int, fan_in: int, fan_out: int, count: int) -> np.ndarray:
    """``count`` draws from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).

    Each uniform u is mapped to ``(2u - 1 + 2**-53) * a``: the half-step
    offset centres the 2**53 grid points so both endpoints are excluded.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    a = glorot_limit(fan_in, fan_out)
    u = uniform01_stream(seed, count)
    return (2.0 * u - 1.0 + 2.0**-53) * a
