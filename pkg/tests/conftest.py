import numpy as np
import pytest

from mdiotbc.rng import derive_rng

MASTER_SEED = 20260810


@pytest.fixture
def rng_factory():
    def make(*labels):
        return derive_rng(MASTER_SEED, *labels)
    return make


@pytest.fixture
def rng(rng_factory):
    return rng_factory("default")


def three_sigma(p: float, trials: int) -> float:
    return 3.0 * np.sqrt(max(p * (1.0 - p), 1e-12) / trials)
