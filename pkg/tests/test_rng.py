import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from resflat import rng

M64 = 2**64


def reference_splitmix(seed, n):
    """Straight transcription of the SplitMix64 recurrence, using % 2**64."""
    out, s = [], seed
    for _ in range(n):
        s = (s + 0x9E3779B97F4A7C15) % M64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % M64
        out.append(z ^ (z >> 31))
    return out


def test_reference_oracle_known_values():
    assert reference_splitmix(0, 2) == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4]


def test_seed_zero_first_two_outputs():
    s, a = rng.splitmix64_next(0)
    s, b = rng.splitmix64_next(s)
    assert (a, b) == (0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4)


@given(st.integers(0, M64 - 1))
def test_next_is_pure(seed):
    assert rng.splitmix64_next(seed) == rng.splitmix64_next(seed)


@given(st.integers(0, M64 - 1), st.integers(0, 40))
def test_vectorized_stream_matches_scalar(seed, n):
    assert rng.splitmix64_stream(seed, n).tolist() == reference_splitmix(seed, n)


def test_unit_mapping_boundaries():
    assert rng.to_unit(0) == 0.0
    top = rng.to_unit(M64 - 1)
    assert top == (2**53 - 1) * 2.0**-53
    assert top < 1.0


def test_uniform01_seed_42_matches_oracle():
    expected = (reference_splitmix(42, 1)[0] >> 11) / 2.0**53
    _, u = rng.uniform01(42)
    assert u == expected
    assert rng.uniform01_stream(42, 1)[0] == expected


def test_layer_seed():
    assert rng.layer_seed(7, 3) == rng.layer_seed(7, 3)
    assert rng.layer_seed(7, 0) == (7 + 0x9E3779B97F4A7C15) % M64
    seeds = {rng.layer_seed(123, i) for i in range(34)}
    assert len(seeds) == 34
    assert rng.layer_seed(123, rng.CLASSIFIER_INDEX) not in seeds
    with pytest.raises(ValueError):
        rng.layer_seed(0, -1)


def test_glorot_empty_and_first_value():
    assert rng.glorot_uniform(1, 3, 3, 0).shape == (0,)
    a = np.sqrt(6 / 6)
    u = (reference_splitmix(1, 1)[0] >> 11) / 2.0**53
    assert rng.glorot_uniform(1, 3, 3, 1)[0] == (2 * u - 1 + 2.0**-53) * a


@given(st.integers(0, M64 - 1), st.integers(1, 50), st.integers(1, 50))
def test_glorot_strictly_inside_limit(seed, fan_in, fan_out):
    a = rng.glorot_limit(fan_in, fan_out)
    w = rng.glorot_uniform(seed, fan_in, fan_out, 200)
    assert np.all(np.abs(w) < a)


def test_glorot_extremes_stay_inside():
    # the two most extreme uniform grid points map strictly inside (-1, 1)
    lo = 2 * 0.0 - 1 + 2.0**-53
    hi = 2 * ((2**53 - 1) * 2.0**-53) - 1 + 2.0**-53
    assert -1 < lo and hi < 1


def test_glorot_rejects_bad_fans():
    with pytest.raises(ValueError):
        rng.glorot_uniform(0, 0, 3, 4)
