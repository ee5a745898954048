import numpy as np
import pytest
from hypothesis import given, strategies as st

from stlab.seeding import derive_seed, rng_for, splitmix64


def test_splitmix_reference():
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_derive_is_pure_and_separates():
    a = derive_seed(7, 3, "simulate")
    assert a == derive_seed(7, 3, "simulate")
    assert len({a, derive_seed(7, 4, "simulate"), derive_seed(8, 3, "simulate"),
                derive_seed(7, 3, "tails")}) == 4


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6), st.text(max_size=8))
def test_range(master, rep, stage):
    assert 0 <= derive_seed(master, rep, stage) < 2**64


def test_rejects_bad_seed():
    with pytest.raises(ValueError):
        derive_seed(-1)
    with pytest.raises(ValueError):
        derive_seed(2**64)


def test_rng_streams_reproduce():
    assert np.array_equal(rng_for(1, 2, "x").random(5), rng_for(1, 2, "x").random(5))
