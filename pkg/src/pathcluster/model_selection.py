"""Choosing the number of clusters.

Each candidate k is scored by how well its clusters separate the target
(bias, lower is better) and by how reproducible the clusters are under
resampling (mean best-match Jaccard similarity). The chosen k has the lowest
bias among the candidates whose stability reaches the threshold.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Partition, TargetColumn
from .errors import ValidationError
from .kmedoids import CLARA, PAM, ClaraConfig, ClusteringResult, KMedoidsConfig, clara, pam
from .proximity import distance_matrix, subsample_distances
from .rng import child_rng, child_seed

DEFAULT_THRESHOLD = 0.6


def _labels(assignments):
    if isinstance(assignments, ClusteringResult):
        return assignments.assignments
    if isinstance(assignments, Partition):
        return assignments.labels
    return Partition(np.asarray(assignments)).labels


# ---------------------------------------------------------------------------
# Bias
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassBiasReport:
    """Class-balanced Gini impurity of a clustering.

    ``proportions[i, g]`` is the share of class g in cluster i, ``priors[g]``
    its share in the whole dataset and ``balanced[i, g]`` the prior-corrected
    frequency, so that rare classes weigh as much as common ones.
    """

    classes: tuple
    proportions: np.ndarray
    priors: np.ndarray
    balanced: np.ndarray
    terms: np.ndarray
    bias: float

    @property
    def G(self):
        return len(self.classes)


@dataclass(frozen=True, eq=False)
class RegressionBiasReport:
    sizes: np.ndarray
    variances: np.ndarray
    n: int
    variance: float
    bias: float


def classification_bias(assignments, target):
    """Sum over clusters of ``1 - sum_g b_ig**2`` with ``b_ig = (p_ig/q_g) / sum_h (p_ih/q_h)``.

    Every declared class must occur in ``target``.
    """
    labels = _labels(assignments)
    if not isinstance(target, TargetColumn) or not target.is_class:
        raise ValidationError("classification bias needs a class target")
    if len(labels) != len(target.values):
        raise ValidationError("assignments and target differ in length")
    G = len(target.classes)
    k = int(labels.max()) + 1
    counts = np.zeros((k, G))
    np.add.at(counts, (labels, target.values), 1.0)
    totals = counts.sum(axis=0)
    missing = [target.classes[g] for g in np.flatnonzero(totals == 0)]
    if missing:
        raise ValidationError(f"classes absent from the data: {', '.join(missing)}")
    priors = totals / totals.sum()
    proportions = counts / counts.sum(axis=1, keepdims=True)
    weighted = proportions / priors
    balanced = weighted / weighted.sum(axis=1, keepdims=True)
    terms = 1.0 - np.sum(balanced**2, axis=1)
    return ClassBiasReport(target.classes, proportions, priors, balanced, terms, float(terms.sum()))


def regression_bias(assignments, target):
    """``sum_j n_j Var(y_j) / (n Var(y))`` with population variances."""
    labels = _labels(assignments)
    if not isinstance(target, TargetColumn) or target.is_class:
        raise ValidationError("regression bias needs a numeric target")
    y = target.values
    if len(labels) != len(y):
        raise ValidationError("assignments and target differ in length")
    total = float(np.var(y))
    if total == 0.0:
        raise ValidationError("target is constant; regression bias is undefined")
    k = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=k)
    variances = np.array([np.var(y[labels == j]) for j in range(k)])
    bias = float(np.sum(sizes * variances) / (len(y) * total))
    return RegressionBiasReport(sizes, variances, len(y), total, bias)


def bias_score(assignments, target):
    if target.is_class:
        return classification_bias(assignments, target).bias
    return regression_bias(assignments, target).bias


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StabilityReport:
    scores: np.ndarray
    mean_jaccard: float
    bootstrap_count: int
    sample_fraction: float
    threshold: float
    stable: bool
    with_replacement: bool = False

    def to_dict(self):
        return {
            "cluster_jaccard": [float(s) for s in self.scores],
            "mean_jaccard": float(self.mean_jaccard),
            "bootstrap_count": self.bootstrap_count,
            "sample_fraction": self.sample_fraction,
            "threshold": self.threshold,
            "stable": self.stable,
            "with_replacement": self.with_replacement,
        }


def summarize_stability(scores, threshold=DEFAULT_THRESHOLD, bootstrap_count=0, sample_fraction=1.0, with_replacement=False):
    """Aggregate per-cluster Jaccard scores into a :class:`StabilityReport`."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValidationError("need at least one cluster score")
    if np.any((scores < 0) | (scores > 1)):
        raise ValidationError("Jaccard scores must lie in [0, 1]")
    mean = float(np.mean(scores))
    return StabilityReport(scores, mean, bootstrap_count, sample_fraction, threshold, mean >= threshold, with_replacement)


def best_match_jaccard(original, resampled, k):
    """For each original cluster, the best Jaccard similarity with any resampled cluster.

    Both label arrays cover the same (resampled) samples. Returns ``nan`` for
    original clusters with no member among them.
    """
    original = np.asarray(original)
    resampled = np.asarray(resampled)
    kb = int(resampled.max()) + 1
    inter = np.zeros((k, kb))
    np.add.at(inter, (original, resampled), 1.0)
    size_a = inter.sum(axis=1)
    size_b = inter.sum(axis=0)
    union = size_a[:, None] + size_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        best = np.max(inter / union, axis=1)
    best[size_a == 0] = np.nan
    return best


@dataclass(frozen=True)
class ClusterMethod:
    """How a single k is clustered: PAM on the full matrix or CLARA."""

    algorithm: str = PAM
    variant: str = "pam_fast"
    init: str = "greedy"
    max_iter: int = 200
    clara_T: int = 5
    clara_subsample: int | None = None
    seed: int = 0

    def validate(self):
        if self.algorithm not in (PAM, CLARA):
            raise ValidationError(f"unknown algorithm {self.algorithm!r}")
        KMedoidsConfig(k=2, max_iter=self.max_iter, variant=self.variant, init=self.init).validate()

    def kmedoids(self, k, seed=None):
        return KMedoidsConfig(k=k, max_iter=self.max_iter, variant=self.variant, seed=self.seed if seed is None else seed, init=self.init)

    def run(self, leaf, k, distances=None, seed=None):
        seed = self.seed if seed is None else seed
        if self.algorithm == CLARA:
            cfg = ClaraConfig(self.kmedoids(k, seed), T=self.clara_T, subsample_size=self.clara_subsample, seed=seed)
            return clara(leaf, cfg)
        if distances is None:
            distances = distance_matrix(leaf)
        return pam(distances, self.kmedoids(k, seed))


def _resample(seed, b, n, size, with_replacement):
    rng = child_rng(seed, "stability", b)
    return np.sort(rng.choice(n, size=size, replace=with_replacement))


def cluster_stability(
    leaf,
    base,
    iters=100,
    fraction=0.8,
    seed=0,
    method=None,
    threshold=DEFAULT_THRESHOLD,
    with_replacement=False,
    distances=None,
    threads=1,
):
    """Bootstrap stability of ``base``.

    Each iteration draws ``ceil(fraction * n)`` samples (without replacement
    unless ``with_replacement``), reclusters them with the same k and method
    on distances from the same forest, and records, for every original
    cluster, its best Jaccard match among the new clusters over the drawn
    samples. Scores are averaged per cluster over the iterations in which the
    cluster is represented. ``distances``, when given, is the full distance
    matrix and is sliced instead of recomputed.
    """
    if iters < 1:
        raise ValidationError("iters must be >= 1")
    if not 0 < fraction <= 1:
        raise ValidationError("fraction must lie in (0, 1]")
    method = method or ClusterMethod()
    n = leaf.n
    k = base.k
    size = math.ceil(fraction * n)
    if size <= k:
        raise ValidationError(f"subsample of {size} samples is too small for k={k}")
    dense = None if distances is None else np.asarray(getattr(distances, "data", distances))

    def one(b):
        idx = _resample(seed, b, n, size, with_replacement)
        sub_seed = child_seed(seed, "stability-init", b)
        sub_leaf = leaf.take(idx)
        if method.algorithm == PAM:
            d = dense[np.ix_(idx, idx)] if dense is not None else subsample_distances(leaf, idx)
            labels = method.run(sub_leaf, k, distances=d, seed=sub_seed).assignments
        else:
            labels = method.run(sub_leaf, k, seed=sub_seed).assignments
        uniq, first = np.unique(idx, return_index=True)
        return best_match_jaccard(base.assignments[uniq], labels[first], k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(iters)))
    else:
        rows = [one(b) for b in range(iters)]
    rows = np.array(rows)
    present = ~np.isnan(rows)
    counts = present.sum(axis=0)
    sums = np.where(present, rows, 0.0).sum(axis=0)
    scores = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return summarize_stability(scores, threshold, iters, fraction, with_replacement)


# ---------------------------------------------------------------------------
# k selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KEntry:
    k: int
    bias: float
    stability: StabilityReport
    clustering: ClusteringResult | None = None

    @property
    def stable(self):
        return self.stability.stable


@dataclass(frozen=True, eq=False)
class KSelectionReport:
    entries: tuple
    threshold: float
    chosen_k: int | None
    diagnostic: str = ""
    settings: dict = field(default_factory=dict)

    def entry(self, k):
        for e in self.entries:
            if e.k == k:
                return e
        raise KeyError(k)

    @property
    def chosen(self):
        return None if self.chosen_k is None else self.entry(self.chosen_k)

    def to_dict(self):
        return {
            "chosen_k": self.chosen_k,
            "threshold": self.threshold,
            "diagnostic": self.diagnostic,
            "settings": dict(self.settings),
            "table": [
                {
                    "k": e.k,
                    "score": e.bias,
                    "stable": e.stable,
                    "mean_jaccard": e.stability.mean_jaccard,
                    "cluster_jaccard": [float(s) for s in e.stability.scores],
                }
                for e in self.entries
            ],
        }


def choose_k(entries):
    """Smallest-bias stable k, ties to the smaller k; ``None`` if nothing is stable."""
    stable = [e for e in entries if e.stable]
    if not stable:
        return None
    return min(stable, key=lambda e: (e.bias, e.k)).k


def report_from_table(table, threshold):
    """Build a :class:`KSelectionReport` from precomputed ``{k: (bias, cluster_scores)}``."""
    entries = tuple(
        KEntry(int(k), float(bias), summarize_stability(scores, threshold))
        for k, (bias, scores) in sorted(table.items())
    )
    return _finish(entries, threshold, {})


def _finish(entries, threshold, settings):
    chosen = choose_k(entries)
    diagnostic = ""
    if chosen is None:
        best = max(entries, key=lambda e: (e.stability.mean_jaccard, -e.k))
        diagnostic = (
            f"no k reached mean Jaccard stability {threshold}; "
            f"the most stable was k={best.k} at {best.stability.mean_jaccard:.3f}"
        )
    return KSelectionReport(entries, threshold, chosen, diagnostic, settings)


@dataclass(frozen=True)
class SelectionConfig:
    method: ClusterMethod = ClusterMethod()
    iters: int = 100
    fraction: float = 0.8
    with_replacement: bool = False
    seed: int = 0

    def validate(self):
        self.method.validate()
        if self.iters < 1:
            raise ValidationError("iters must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ValidationError("fraction must lie in (0, 1]")


def select_k(leaf, target, k_range, threshold=DEFAULT_THRESHOLD, config=None, threads=1):
    """Cluster, score and choose k over ``k_range``.

    Bias is computed on the full-data clustering of each k; stability on
    ``config.iters`` resamples. Unstable k are discarded and the lowest-bias
    survivor wins. When nothing is stable, ``chosen_k`` is None and
    ``diagnostic`` says why.
    """
    config = config or SelectionConfig()
    config.validate()
    ks = sorted({int(k) for k in k_range})
    if not ks:
        raise ValidationError("k_range is empty")
    if not 0 < threshold <= 1:
        raise ValidationError("threshold must lie in (0, 1]")
    if target is None or len(target.values) != leaf.n:
        raise ValidationError("target must cover every clustered sample")
    for k in ks:
        config.method.kmedoids(k).validate(leaf.n)

    distances = distance_matrix(leaf) if config.method.algorithm == PAM else None

    def evaluate(k):
        method = replace(config.method, seed=child_seed(config.seed, "cluster", k))
        base = method.run(leaf, k, distances=distances)
        stability = cluster_stability(
            leaf,
            base,
            iters=config.iters,
            fraction=config.fraction,
            seed=child_seed(config.seed, "bootstrap", k),
            method=method,
            threshold=threshold,
            with_replacement=config.with_replacement,
            distances=distances,
        )
        return KEntry(k, bias_score(base, target), stability, base)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = tuple(pool.map(evaluate, ks))
    else:
        entries = tuple(evaluate(k) for k in ks)
    settings = {
        "k_range": ks,
        "iters": config.iters,
        "fraction": config.fraction,
        "with_replacement": config.with_replacement,
        "seed": config.seed,
        "algorithm": config.method.algorithm,
        "variant": config.method.variant,
        "init": config.method.init,
    }
    return _finish(entries, threshold, settings)
