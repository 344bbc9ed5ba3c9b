import numpy as np
import pytest
from hypothesis import settings

from pagann.core import Dataset
from pagann.dataset_io import gen_synthetic

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")

SEEDS = (0, 1, 2)


@pytest.fixture(params=SEEDS)
def seed(request):
    return request.param


def random_dataset(n: int, d: int, seed: int = 0) -> Dataset:
    return Dataset(np.random.default_rng(seed).random((n, d), dtype=np.float32))


@pytest.fixture
def small_mixture():
    return gen_synthetic(2000, 8, "gaussian-mixture", seed=3, m=5, sigma=0.05).dataset
