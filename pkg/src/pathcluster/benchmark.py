"""Subclass recovery on the simulated benchmark.

Three methods cluster the same simulated table and are scored by adjusted
Rand index against the true subclasses:

* ``fgc`` - a supervised forest, forest distances, k chosen by bias and
  stability;
* ``kmedoids_euclidean`` - k-medoids on Euclidean distances between
  standardized features, told the true k;
* ``unsupervised_rf`` - a forest trained to tell real rows from rows drawn
  from the product of the marginals, its proximities over the real rows
  clustered with k-medoids at the true k.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from . import forest
from .dataset import SimulationParams, adjusted_rand_index, simulate_benchmark
from .importance import local_importance
from .kmedoids import KMedoidsConfig, pam
from .model_selection import ClusterMethod, SelectionConfig, select_k
from .proximity import distance_matrix
from .rng import child_seed

FGC = "fgc"
EUCLIDEAN = "kmedoids_euclidean"
UNSUPERVISED_RF = "unsupervised_rf"
METHODS = (FGC, EUCLIDEAN, UNSUPERVISED_RF)
CSV_HEADER = "seed,method,ari,k"


@dataclass(frozen=True)
class BenchmarkConfig:
    n_trees: int = 100
    max_depth: int | None = 3
    max_features: str = "sqrt"
    bootstrap_fraction: float = 0.8
    k_min: int = 2
    k_max: int = 8
    threshold: float = 0.6
    bootstrap_iters: int = 100
    bootstrap_fraction_jaccard: float = 0.8
    true_k: int = 4
    urf_trees: int = 2000
    max_iter: int = 200

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    seed: int
    ari: dict
    k: dict
    importance: list
    wall_time: dict = field(default_factory=dict)

    def to_dict(self):
        """Deterministic content; wall times are reported separately."""
        return {
            "seed": self.seed,
            "methods": [
                {"method": m, "ari": self.ari[m], "k": self.k[m]} for m in METHODS
            ],
            "fgc_global_importance": self.importance,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def csv_rows(self):
        return [f"{self.seed},{m},{_fmt(self.ari[m])},{_fmt(self.k[m])}" for m in METHODS]


def _fmt(v):
    return "" if v is None else repr(v)


def euclidean_distances(dataset):
    """Euclidean distances over z-scored columns; categorical columns enter as their integer codes."""
    X = dataset.matrix().astype(np.float64)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - X.mean(axis=0)) / sd
    return squareform(pdist(Z))


def run_fgc(dataset, config, seed, threads=1):
    model = forest.train(
        dataset,
        forest.TrainConfig(
            n_trees=config.n_trees,
            max_depth=config.max_depth,
            max_features=config.max_features,
            bootstrap_fraction=config.bootstrap_fraction,
            seed=child_seed(seed, "fgc-forest"),
        ),
        threads=threads,
    )
    leaf = forest.apply(model, dataset, threads=threads)
    selection = select_k(
        leaf,
        dataset.target,
        range(config.k_min, config.k_max + 1),
        config.threshold,
        SelectionConfig(
            method=ClusterMethod(max_iter=config.max_iter),
            iters=config.bootstrap_iters,
            fraction=config.bootstrap_fraction_jaccard,
            seed=child_seed(seed, "fgc-select"),
        ),
        threads=threads,
    )
    return selection


def run_euclidean(dataset, config):
    return pam(euclidean_distances(dataset), KMedoidsConfig(k=config.true_k, max_iter=config.max_iter))


def run_unsupervised_rf(dataset, config, seed, threads=1):
    features = dataset.with_target(None)
    labelled = forest.real_vs_noise(features, child_seed(seed, "urf-noise"))
    model = forest.train(
        labelled,
        forest.TrainConfig(n_trees=config.urf_trees, max_depth=None, max_features="sqrt", seed=child_seed(seed, "urf-forest")),
        threads=threads,
    )
    leaf = forest.apply(model, features, threads=threads)
    return pam(distance_matrix(leaf, threads=threads), KMedoidsConfig(k=config.true_k, max_iter=config.max_iter))


def run_benchmark(seed, config=None, params=None, threads=1):
    """Simulate the benchmark for ``seed`` and score all three methods."""
    config = config or BenchmarkConfig()
    dataset, truth = simulate_benchmark(seed, params or SimulationParams())
    ari, ks, times = {}, {}, {}

    t0 = time.perf_counter()
    selection = run_fgc(dataset, config, seed, threads)
    times[FGC] = time.perf_counter() - t0
    ks[FGC] = selection.chosen_k
    importance = []
    if selection.chosen_k is None:
        ari[FGC] = None
    else:
        clustering = selection.chosen.clustering
        ari[FGC] = adjusted_rand_index(clustering.assignments, truth)
        report = local_importance(dataset, clustering, "wasserstein")
        importance = [{"feature": f, "importance": report.global_score(f)} for f in report.ranking()]

    t0 = time.perf_counter()
    ari[EUCLIDEAN] = adjusted_rand_index(run_euclidean(dataset, config).assignments, truth)
    times[EUCLIDEAN] = time.perf_counter() - t0
    ks[EUCLIDEAN] = config.true_k

    t0 = time.perf_counter()
    ari[UNSUPERVISED_RF] = adjusted_rand_index(run_unsupervised_rf(dataset, config, seed, threads).assignments, truth)
    times[UNSUPERVISED_RF] = time.perf_counter() - t0
    ks[UNSUPERVISED_RF] = config.true_k

    return BenchmarkResult(seed, ari, ks, importance, times)
