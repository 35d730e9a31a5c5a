"""Cluster-wise feature importance from distribution shifts.

A feature matters for a cluster when its values inside the cluster are
distributed differently from its values over the whole dataset. The shift is
measured with the 1-D Wasserstein distance (on raw samples) or the
Jensen-Shannon distance (on binned or categorical mass vectors), then
normalized so that each cluster's most shifted feature scores 1.0. Global
importance is the mean of the normalized local scores over clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Partition
from .errors import ValidationError
from .kmedoids import ClusteringResult

WASSERSTEIN = "wasserstein"
JENSEN_SHANNON = "jensen_shannon"
DEFAULT_BIN_BOUNDS = (2, 50)


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Either sorted samples (numeric) or a probability mass vector over named bins."""

    samples: np.ndarray | None = None
    masses: np.ndarray | None = None
    bins: tuple | None = None

    def __post_init__(self):
        if (self.samples is None) == (self.masses is None):
            raise ValidationError("give either samples or masses")
        if self.samples is not None:
            s = np.sort(np.asarray(self.samples, dtype=np.float64).ravel())
            if s.size == 0:
                raise ValidationError("empty distribution")
            if not np.all(np.isfinite(s)):
                raise ValidationError("samples must be finite")
            object.__setattr__(self, "samples", s)
        else:
            m = np.asarray(self.masses, dtype=np.float64).ravel()
            if m.size == 0:
                raise ValidationError("empty distribution")
            if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
                raise ValidationError("masses must be non-negative and sum to 1")
            bins = tuple(range(m.size)) if self.bins is None else tuple(self.bins)
            if len(bins) != m.size:
                raise ValidationError("one bin label per mass entry required")
            object.__setattr__(self, "masses", m)
            object.__setattr__(self, "bins", bins)

    @classmethod
    def from_samples(cls, values):
        return cls(samples=values)

    @classmethod
    def from_counts(cls, counts, bins=None):
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ValidationError("empty distribution")
        return cls(masses=counts / total, bins=bins)

    @property
    def is_samples(self):
        return self.samples is not None


def wasserstein_1d(a, b):
    """Exact W1 between two sample distributions: the area between their step CDFs."""
    if not (a.is_samples and b.is_samples):
        raise ValidationError("Wasserstein distance needs sample distributions")
    x, y = a.samples, b.samples
    grid = np.unique(np.concatenate([x, y]))
    if grid.size < 2:
        return 0.0
    fx = np.searchsorted(x, grid[:-1], side="right") / x.size
    fy = np.searchsorted(y, grid[:-1], side="right") / y.size
    return float(np.sum(np.abs(fx - fy) * np.diff(grid)))


def jensen_shannon_distance(p, q):
    """Square root of the Jensen-Shannon divergence in bits, so the result lies in [0, 1]."""
    if p.is_samples or q.is_samples:
        raise ValidationError("Jensen-Shannon distance needs mass vectors")
    if p.bins != q.bins:
        raise ValidationError("mass vectors are over different bins")
    m = 0.5 * (p.masses + q.masses)

    def kl(u):
        nz = u > 0
        return float(np.sum(u[nz] * np.log2(u[nz] / m[nz])))

    return math.sqrt(max(0.5 * (kl(p.masses) + kl(q.masses)), 0.0))


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------

FREEDMAN_DIACONIS_QUANTILE = "freedman_diaconis_quantile"


@dataclass(frozen=True, eq=False)
class BinningSpec:
    """Quantile bin edges; ``constant`` marks a feature with a single value."""

    edges: np.ndarray
    method: str = FREEDMAN_DIACONIS_QUANTILE
    constant: bool = False

    @property
    def bin_count(self):
        return len(self.edges) - 1

    def assign(self, values):
        """Bin index of each value; values beyond the outer edges go to the end bins."""
        return np.searchsorted(self.edges[1:-1], np.asarray(values, dtype=np.float64), side="right")

    def counts(self, values):
        return np.bincount(self.assign(values), minlength=self.bin_count)

    def labels(self):
        return tuple(range(self.bin_count))


def freedman_diaconis_count(values):
    """Bin count ``ceil(range / (2 IQR n^(-1/3)))``; Sturges' ``ceil(log2 n) + 1`` when IQR is 0."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    span = float(v.max() - v.min())
    q75, q25 = np.percentile(v, [75, 25])
    iqr = float(q75 - q25)
    if iqr > 0:
        return math.ceil(span / (2.0 * iqr * n ** (-1.0 / 3.0)))
    return math.ceil(math.log2(n)) + 1


def bin_numeric(values, bounds=DEFAULT_BIN_BOUNDS):
    """Bins with roughly equal occupancy, their number set by the Freedman-Diaconis rule.

    Edges sit at empirical quantiles; coinciding quantiles are merged, so
    heavily tied data may end up with fewer bins than requested.
    """
    lo, hi = bounds
    if lo < 1 or hi < lo:
        raise ValidationError("bin bounds must satisfy 1 <= min <= max")
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValidationError("cannot bin an empty feature")
    if v.min() == v.max():
        return BinningSpec(np.array([v.min(), v.max()]), constant=True)
    count = min(max(freedman_diaconis_count(v), lo), hi)
    edges = np.unique(np.quantile(v, np.linspace(0.0, 1.0, count + 1)))
    return BinningSpec(edges)


# ---------------------------------------------------------------------------
# Importance
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    """Local (cluster x feature) and global importance.

    ``local`` holds per-cluster normalized scores, ``raw_local`` the
    distances before normalization. Clusters are indexed ``0..k-1``.
    """

    features: tuple
    local: np.ndarray
    raw_local: np.ndarray
    global_: np.ndarray
    metric: str
    cluster_sizes: np.ndarray
    flags: tuple = field(default_factory=tuple)

    @property
    def k(self):
        return self.local.shape[0]

    def ranking(self):
        """Features by descending global importance, ties by name."""
        order = sorted(range(len(self.features)), key=lambda j: (-self.global_[j], self.features[j]))
        return [self.features[j] for j in order]

    def global_score(self, feature):
        return float(self.global_[self.features.index(feature)])

    def rows(self):
        """Long-form rows ``(cluster, feature, raw, normalized)`` with 1-based clusters."""
        return [
            (i + 1, f, float(self.raw_local[i, j]), float(self.local[i, j]))
            for i in range(self.k)
            for j, f in enumerate(self.features)
        ]

    def to_dict(self):
        return {
            "metric": self.metric,
            "features": list(self.features),
            "cluster_sizes": [int(s) for s in self.cluster_sizes],
            "global": [
                {"feature": f, "importance": self.global_score(f)} for f in self.ranking()
            ],
            "local": [[float(v) for v in row] for row in self.local],
            "raw_local": [[float(v) for v in row] for row in self.raw_local],
            "flags": list(self.flags),
        }


def write_importance_csv(report, path):
    with open(path, "w", newline="") as fh:
        fh.write("cluster,feature,raw,normalized\n")
        for c, f, raw, norm in report.rows():
            fh.write(f"{c},{f},{raw!r},{norm!r}\n")


def default_metric(dataset):
    """Wasserstein for mostly numeric tables, Jensen-Shannon otherwise."""
    numeric = sum(col.is_numeric for col in dataset.columns)
    return WASSERSTEIN if numeric * 2 > len(dataset.columns) else JENSEN_SHANNON


def _cluster_labels(clustering, n):
    if isinstance(clustering, ClusteringResult):
        labels = clustering.assignments
    elif isinstance(clustering, Partition):
        labels = clustering.labels
    else:
        labels = Partition(np.asarray(clustering)).labels
    labels = np.asarray(labels)
    if len(labels) != n:
        raise ValidationError(f"clustering covers {len(labels)} samples, dataset has {n}")
    return labels


def _feature_distances(col, labels, k, metric, bounds):
    """Raw distance of each cluster's distribution from the background, plus flags."""
    out = np.zeros(k)
    flags = []
    if col.is_numeric and metric == WASSERSTEIN:
        background = EmpiricalDistribution.from_samples(col.values)
        for i in range(k):
            out[i] = wasserstein_1d(EmpiricalDistribution.from_samples(col.values[labels == i]), background)
        return out, flags
    if not col.is_numeric and metric == WASSERSTEIN:
        # one indicator per category; W1 between two Bernoulli laws is |p - q|
        codes = np.asarray(col.values)
        overall = np.bincount(codes, minlength=len(col.categories)) / len(codes)
        for i in range(k):
            inside = codes[labels == i]
            rate = np.bincount(inside, minlength=len(col.categories)) / len(inside)
            out[i] = float(np.max(np.abs(rate - overall)))
        return out, flags
    if col.is_numeric:
        spec = bin_numeric(col.values, bounds)
        if spec.constant:
            flags.append(f"feature {col.name} is constant; distances set to 0")
            return out, flags
        codes, bins = spec.assign(col.values), spec.labels()
    else:
        codes, bins = np.asarray(col.values), tuple(col.categories)
    background = EmpiricalDistribution.from_counts(np.bincount(codes, minlength=len(bins)), bins)
    for i in range(k):
        inside = EmpiricalDistribution.from_counts(np.bincount(codes[labels == i], minlength=len(bins)), bins)
        out[i] = jensen_shannon_distance(inside, background)
    return out, flags


def local_importance(dataset, clustering, metric=None, bounds=DEFAULT_BIN_BOUNDS):
    """Per-cluster and global importance of every feature.

    Each cluster is compared against the background of all samples
    (including the cluster itself). Numeric features use raw samples for
    Wasserstein and shared background bins for Jensen-Shannon. Categorical
    features use category masses for Jensen-Shannon; for Wasserstein each
    category becomes an indicator and the largest indicator distance is kept.
    """
    metric = metric or default_metric(dataset)
    if metric not in (WASSERSTEIN, JENSEN_SHANNON):
        raise ValidationError(f"unknown metric {metric!r}")
    labels = _cluster_labels(clustering, dataset.row_count)
    k = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=k)
    flags = [f"cluster {i + 1} has {s} sample(s); scores are low-confidence" for i, s in enumerate(sizes) if s < 2]

    raw = np.zeros((k, dataset.n_features))
    for j, col in enumerate(dataset.columns):
        raw[:, j], notes = _feature_distances(col, labels, k, metric, bounds)
        flags.extend(notes)

    local = np.zeros_like(raw)
    for i in range(k):
        top = raw[i].max()
        if top > 0:
            local[i] = raw[i] / top
        else:
            flags.append(f"cluster {i + 1} matches the background on every feature; scores set to 0")
    return ImportanceReport(
        dataset.feature_names, local, raw, local.mean(axis=0), metric, sizes, tuple(flags)
    )


def importance_from_dict(raw):
    """Inverse of :meth:`ImportanceReport.to_dict`."""
    try:
        features = tuple(raw["features"])
        local = np.array(raw["local"], dtype=np.float64)
        raw_local = np.array(raw["raw_local"], dtype=np.float64)
        metric = raw["metric"]
        sizes = np.array(raw["cluster_sizes"], dtype=np.int64)
        flags = tuple(raw.get("flags", ()))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed importance JSON: {exc}") from None
    if local.ndim != 2 or local.shape != raw_local.shape or local.shape[1] != len(features) or len(sizes) != local.shape[0]:
        raise ValidationError("malformed importance JSON: inconsistent shapes")
    if metric not in (WASSERSTEIN, JENSEN_SHANNON):
        raise ValidationError(f"unknown metric {metric!r}")
    return ImportanceReport(features, local, raw_local, local.mean(axis=0), metric, sizes, flags)
