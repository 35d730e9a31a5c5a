import itertools

import numpy as np
import pytest

from pathcluster.dataset import CATEGORICAL, NUMERIC, Dataset, FeatureColumn, TargetColumn


def brute_force_inertia(D, k):
    """Global k-medoids optimum by enumerating every medoid subset."""
    n = D.shape[0]
    return min(float(np.min(D[:, list(c)], axis=1).sum()) for c in itertools.combinations(range(n), k))


def is_swap_local_optimum(D, medoids, tol=1e-12):
    medoids = [int(m) for m in medoids]
    current = float(np.min(D[:, medoids], axis=1).sum())
    for slot in range(len(medoids)):
        for o in range(D.shape[0]):
            if o in medoids:
                continue
            trial = list(medoids)
            trial[slot] = o
            if float(np.min(D[:, trial], axis=1).sum()) < current - tol:
                return False
    return True


def random_distance_matrix(rng, n, kind):
    """Euclidean points, symmetric uniform noise, or forest-like leaf disagreement."""
    if kind == 0:
        X = rng.normal(size=(n, 2))
        return np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    if kind == 1:
        A = rng.random((n, n))
        D = (A + A.T) / 2
        np.fill_diagonal(D, 0.0)
        return D
    L = rng.integers(0, 3, size=(n, 10))
    return (L[:, None] != L[None]).sum(-1) / 10.0


def tiny_dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    cat = rng.integers(0, 3, size=n)
    y = (x > 0).astype(np.int64)
    return Dataset(
        (
            FeatureColumn("x", NUMERIC, x),
            FeatureColumn("colour", CATEGORICAL, cat, ("blue", "green", "red")),
        ),
        TargetColumn("label", "class", y, ("no", "yes")),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def benchmark_data():
    from pathcluster.dataset import simulate_benchmark

    return simulate_benchmark(0)
