import time

import numpy as np
import pytest

from pathcluster.errors import ValidationError
from pathcluster.kmedoids import KMedoidsConfig, pam
from pathcluster.profiling import ProfileRow, dense_bytes, profile, synthetic_leaves
from pathcluster.proximity import DENSE, distance_matrix


def test_dense_storage_estimates():
    assert dense_bytes(1000) / 1e6 == pytest.approx(4.0)
    assert dense_bytes(10_000) / 1e6 == pytest.approx(400.0)
    assert ProfileRow(1000, "dense_matrix", 0.5, 12.0).csv() == "1000,dense_matrix,0.5000,12.0,3.8,"


def test_synthetic_leaves_are_seeded():
    a = synthetic_leaves(50, 7, seed=1)
    assert np.array_equal(a.leaf_ids, synthetic_leaves(50, 7, seed=1).leaf_ids)
    assert a.leaf_ids.shape == (50, 7)


def test_disk_budget_skips(tmp_path):
    rows = profile([40], ["memmap_matrix"], n_trees=5, k=2, workdir=str(tmp_path), disk_budget=100)
    assert rows[0].wall_seconds is None and "skipped" in rows[0].note
    with pytest.raises(ValidationError):
        profile([40], ["bogus"])


def test_fast_swap_beats_naive_swap():
    # a random start needs several swaps, where greedy acceptance pays off;
    # after BUILD both variants finish in a sweep or two and time is noise
    d = distance_matrix(synthetic_leaves(2000, 100, 0), DENSE)
    best, inertia = {}, {}
    for variant in ("pam_naive", "pam_fast"):
        times = []
        for _ in range(2):
            start = time.perf_counter()
            result = pam(d, KMedoidsConfig(k=8, variant=variant, init="random"))
            times.append(time.perf_counter() - start)
        best[variant], inertia[variant] = min(times), result.inertia
    print(f"n=2000 k=8 random init: pam_naive {best['pam_naive']:.2f}s pam_fast {best['pam_fast']:.2f}s")
    assert best["pam_fast"] < best["pam_naive"]
    assert inertia["pam_fast"] <= inertia["pam_naive"] * (1 + 1e-9)
