"""Shared synthetic datasets and helpers for the test suite."""

import numpy as np
import pytest

from sosrep import Dataset


def philox(seed, stream=0):
    """Counter-based generator matching the library's seeding convention."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def make_mixture2d(n=300, outlier_frac=0.1, seed=0, name="mixture2d"):
    """2-D Gaussian mixture inliers plus uniform box outliers, labeled."""
    rng = philox(seed, 7)
    n_out = max(1, int(round(outlier_frac * n)))
    n_in = n - n_out
    centers = np.array([[-2.5, 0.0], [2.5, 0.0], [0.0, 2.5]])
    comp = rng.integers(0, len(centers), n_in)
    X_in = centers[comp] + 0.5 * rng.standard_normal((n_in, 2))
    X_out = rng.uniform(-7.0, 7.0, size=(n_out, 2))
    X = np.vstack([X_in, X_out])
    y = np.r_[np.zeros(n_in, dtype=int), np.ones(n_out, dtype=int)]
    return Dataset(X=X, y=y, name=name)


def make_two_clusters(n_per=100, seed=0, name="two_clusters"):
    """Unlabeled pair of isotropic clusters at +-2 on the first axis."""
    rng = philox(seed, 5)
    X = np.vstack([
        np.array([-2.0, 0.0]) + 0.5 * rng.standard_normal((n_per, 2)),
        np.array([2.0, 0.0]) + 0.5 * rng.standard_normal((n_per, 2)),
    ])
    return Dataset(X=X, name=name)


@pytest.fixture
def mixture2d():
    return make_mixture2d()


@pytest.fixture
def two_clusters():
    return make_two_clusters()
