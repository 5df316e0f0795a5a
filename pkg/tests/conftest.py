import numpy as np
import pytest

from j2r.dataset import TrialDataset


@pytest.fixture
def toy4():
    """Four subjects, one follow-up; the second treated subject drops out."""
    return TrialDataset(covariates=np.array([[0.1], [-0.2], [0.3], [0.0]]), treatment=np.array([1, 1, 0, 0]),
                        outcomes=np.array([[3.0], [np.nan], [1.0], [2.0]]))


def random_dataset(rng, n=60, t=2, p=2, drop=0.25):
    x = rng.normal(size=(n, p))
    a = rng.integers(0, 2, size=n)
    a[:2] = (0, 1)
    y = rng.normal(size=(n, t))
    alive = np.ones(n, dtype=bool)
    for s in range(t):
        alive &= rng.random(n) > drop
        y[~alive, s] = np.nan
    return TrialDataset(covariates=x, treatment=a, outcomes=y)
