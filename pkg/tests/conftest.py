import numpy as np
import pytest

from nireg.data import LabeledDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_dataset(rng):
    x = rng.normal(size=(60, 5))
    y = (x[:, 0] + 0.5 * rng.normal(size=60) > 0).astype(int)
    return LabeledDataset(features=x, labels=y)
