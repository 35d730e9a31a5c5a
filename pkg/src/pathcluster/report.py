"""Decision-path report: what distinguishes each cluster.

The report holds a cluster x feature heatmap of mean standardized values
(features ordered by global importance), the target and optional annotation
composition of every cluster, and per-cluster summaries of the raw feature
values over shared bins. :func:`render_svg` draws it as a single SVG figure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Partition
from .errors import ValidationError
from .importance import ImportanceReport, bin_numeric
from .kmedoids import ClusteringResult

COLOR_CLIP = 2.0


@dataclass(frozen=True, eq=False)
class Composition:
    """Share of each category per cluster; rows sum to 1."""

    name: str
    categories: tuple
    proportions: np.ndarray

    def to_dict(self):
        return {
            "name": self.name,
            "categories": list(self.categories),
            "proportions": [[float(v) for v in row] for row in self.proportions],
        }


@dataclass(frozen=True, eq=False)
class TargetSummary:
    """Per-cluster mean and standard deviation of a numeric target."""

    name: str
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"name": self.name, "mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}


@dataclass(frozen=True, eq=False)
class FeatureDistribution:
    """Raw-value summary of one feature in every cluster.

    Numeric features carry ``quantiles`` rows ``(min, q1, median, q3, max)``
    and histogram counts over the shared ``edges``. Categorical features carry
    counts per category in ``labels``.
    """

    feature: str
    numeric: bool
    counts: np.ndarray
    edges: np.ndarray | None = None
    labels: tuple = ()
    quantiles: np.ndarray | None = None

    def to_dict(self):
        out = {"feature": self.feature, "numeric": self.numeric, "counts": self.counts.tolist()}
        if self.numeric:
            out["edges"] = [float(e) for e in self.edges]
            out["quantiles"] = [[float(v) for v in row] for row in self.quantiles]
        else:
            out["labels"] = list(self.labels)
        return out


@dataclass(frozen=True, eq=False)
class DecisionPathReport:
    features: tuple
    importance: np.ndarray
    clusters: tuple
    cluster_sizes: np.ndarray
    heatmap: np.ndarray
    target: Composition | TargetSummary | None
    annotations: tuple = ()
    distributions: tuple = ()
    pinned: tuple = ()
    metric: str = ""
    clip: float = COLOR_CLIP
    notes: tuple = field(default_factory=tuple)

    def to_dict(self):
        return {
            "features": list(self.features),
            "importance": [float(v) for v in self.importance],
            "pinned": list(self.pinned),
            "metric": self.metric,
            "clusters": list(self.clusters),
            "cluster_sizes": [int(s) for s in self.cluster_sizes],
            "heatmap": [[float(v) for v in row] for row in self.heatmap],
            "color_clip": self.clip,
            "target": None if self.target is None else {"kind": type(self.target).__name__, **self.target.to_dict()},
            "annotations": [a.to_dict() for a in self.annotations],
            "distributions": [d.to_dict() for d in self.distributions],
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def heatmap_csv(self):
        lines = ["cluster," + ",".join(self.features)]
        for c, row in zip(self.clusters, self.heatmap):
            lines.append(f"{c}," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _labels(clustering, n):
    if isinstance(clustering, ClusteringResult):
        labels = clustering.assignments
    elif isinstance(clustering, Partition):
        labels = clustering.labels
    else:
        labels = Partition(np.asarray(clustering)).labels
    if len(labels) != n:
        raise ValidationError(f"clustering covers {len(labels)} samples, dataset has {n}")
    return np.asarray(labels)


def standardized_column(col):
    """Population z-scores; categorical columns use their integer codes, constant columns give 0."""
    v = np.asarray(col.values, dtype=np.float64)
    sd = v.std()
    if sd == 0:
        return np.zeros_like(v)
    return (v - v.mean()) / sd


def _composition(name, values, categories, labels, k):
    counts = np.zeros((k, len(categories)))
    np.add.at(counts, (labels, values), 1.0)
    return Composition(name, tuple(categories), counts / counts.sum(axis=1, keepdims=True))


def _distribution(col, labels, k, bounds):
    if col.is_numeric:
        spec = bin_numeric(col.values, bounds)
        codes = spec.assign(col.values)
        counts = np.zeros((k, spec.bin_count), dtype=np.int64)
        np.add.at(counts, (labels, codes), 1)
        quantiles = np.array(
            [np.percentile(col.values[labels == i], [0, 25, 50, 75, 100]) for i in range(k)]
        )
        return FeatureDistribution(col.name, True, counts, edges=spec.edges, quantiles=quantiles)
    counts = np.zeros((k, len(col.categories)), dtype=np.int64)
    np.add.at(counts, (labels, np.asarray(col.values)), 1)
    return FeatureDistribution(col.name, False, counts, labels=tuple(col.categories))


def build_report(dataset, clustering, importance, annotations=None, top_n=None, pinned=(), bounds=(2, 50)):
    """Assemble a :class:`DecisionPathReport`.

    Parameters
    ----------
    importance : ImportanceReport
        Computed on the same clustering; its global scores order the features.
    annotations : mapping of name -> per-sample labels, optional
        Metadata shown as per-cluster composition next to the target.
    top_n : int, optional
        Keep only the ``top_n`` most important features, plus ``pinned``.
    """
    labels = _labels(clustering, dataset.row_count)
    k = int(labels.max()) + 1
    if not isinstance(importance, ImportanceReport):
        raise ValidationError("importance must be an ImportanceReport")
    if tuple(importance.features) != tuple(dataset.feature_names) or importance.k != k:
        raise ValidationError("importance was computed for a different dataset or clustering")
    if top_n is not None and top_n < 1:
        raise ValidationError("top_n must be >= 1")
    unknown = [p for p in pinned if p not in dataset.feature_names]
    if unknown:
        raise ValidationError(f"pinned features not in the dataset: {', '.join(unknown)}")

    ranking = importance.ranking()
    chosen = ranking if top_n is None else ranking[:top_n]
    chosen = set(chosen) | set(pinned)
    features = tuple(f for f in ranking if f in chosen)
    if not features:
        raise ValidationError("no features to report")

    sizes = np.bincount(labels, minlength=k)
    heatmap = np.zeros((k, len(features)))
    for j, name in enumerate(features):
        z = standardized_column(dataset.column(name))
        heatmap[:, j] = np.bincount(labels, weights=z, minlength=k) / sizes

    target = None
    t = dataset.target
    if t is not None:
        if t.is_class:
            target = _composition(t.name, t.values, t.classes, labels, k)
        else:
            target = TargetSummary(
                t.name,
                np.array([t.values[labels == i].mean() for i in range(k)]),
                np.array([t.values[labels == i].std() for i in range(k)]),
            )

    comps = []
    for name, values in (annotations or {}).items():
        values = [str(v) for v in values]
        if len(values) != dataset.row_count:
            raise ValidationError(f"annotation {name!r} has {len(values)} values, expected {dataset.row_count}")
        cats = sorted(set(values))
        lookup = {c: i for i, c in enumerate(cats)}
        comps.append(_composition(name, np.array([lookup[v] for v in values]), cats, labels, k))

    dists = tuple(_distribution(dataset.column(f), labels, k, bounds) for f in features)
    return DecisionPathReport(
        features=features,
        importance=np.array([importance.global_score(f) for f in features]),
        clusters=tuple(range(1, k + 1)),
        cluster_sizes=sizes,
        heatmap=heatmap,
        target=target,
        annotations=tuple(comps),
        distributions=dists,
        pinned=tuple(p for p in features if p in pinned),
        metric=importance.metric,
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_SVG_RC = {
    "svg.hashsalt": "pathcluster",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 8,
    "path.simplify": False,
}


def _composition_panel(ax, comp, clusters, cmap):
    left = np.zeros(len(clusters))
    y = np.arange(len(clusters))
    for c, name in enumerate(comp.categories):
        width = comp.proportions[:, c]
        ax.barh(y, width, left=left, color=cmap(c % cmap.N), edgecolor="white", linewidth=0.5, label=str(name))
        left += width
    ax.set_xlim(0, 1)
    ax.set_ylim(len(clusters) - 0.5, -0.5)
    ax.set_yticks([])
    ax.set_xticks([0, 0.5, 1])
    ax.set_title(comp.name)
    ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.15), ncol=min(3, len(comp.categories)), frameon=False, fontsize=6)


def _distribution_panel(ax, dist, clusters, cmap):
    for i, c in enumerate(clusters):
        counts = dist.counts[i]
        share = counts / max(1, counts.sum())
        if dist.numeric:
            # quantile bins differ in width, so draw densities
            ax.stairs(share / np.diff(dist.edges), dist.edges, color=cmap(i % cmap.N), label=f"cluster {c}")
        else:
            x = np.arange(len(dist.labels)) + (i - (len(clusters) - 1) / 2) * 0.8 / len(clusters)
            ax.bar(x, share, width=0.8 / len(clusters), color=cmap(i % cmap.N), label=f"cluster {c}")
    if not dist.numeric:
        ax.set_xticks(np.arange(len(dist.labels)))
        ax.set_xticklabels(dist.labels)
    ax.set_title(dist.feature)
    ax.set_ylabel("density" if dist.numeric else "share")


def render_svg(report, path):
    """Write the report as a deterministic SVG.

    The heatmap uses a diverging scale symmetric about 0 and clipped at
    ``report.clip`` standardized units. Identical reports give
    byte-identical files.
    """
    if not report.features:
        raise ValidationError("report has no features to draw")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    k = len(report.clusters)
    p = len(report.features)
    comps = ([report.target] if isinstance(report.target, Composition) else []) + list(report.annotations)
    ncols = 3
    nrows = -(-p // ncols)

    with plt.rc_context(_SVG_RC):
        width = max(6.0, 1.2 + 0.6 * p + 1.8 * len(comps))
        height = 1.2 + 0.35 * k + 2.0 * nrows + 0.8
        fig = plt.figure(figsize=(width, height))
        top = fig.add_gridspec(
            2, 1 + len(comps), height_ratios=[0.6 + 0.35 * k, 2.0 * nrows],
            width_ratios=[max(1.0, 0.6 * p)] + [1.5] * len(comps), hspace=0.45, wspace=0.25,
        )
        ax = fig.add_subplot(top[0, 0])
        cmap = plt.get_cmap("RdBu_r")
        im = ax.imshow(
            np.clip(report.heatmap, -report.clip, report.clip), cmap=cmap,
            vmin=-report.clip, vmax=report.clip, aspect="auto", interpolation="nearest",
        )
        ax.set_xticks(np.arange(p))
        ax.set_xticklabels(report.features, rotation=45, ha="right")
        ax.set_yticks(np.arange(k))
        ax.set_yticklabels([f"cluster {c} (n={s})" for c, s in zip(report.clusters, report.cluster_sizes)])
        ax.set_title("mean standardized value")
        fig.colorbar(im, ax=ax, fraction=0.04, pad=0.02)

        categorical = plt.get_cmap("tab10")
        for i, comp in enumerate(comps):
            _composition_panel(fig.add_subplot(top[0, 1 + i]), comp, report.clusters, categorical)

        grid = top[1, :].subgridspec(nrows, ncols, hspace=0.7, wspace=0.35)
        for j, dist in enumerate(report.distributions):
            _distribution_panel(fig.add_subplot(grid[j // ncols, j % ncols]), dist, report.clusters, categorical)
        if report.distributions:
            fig.axes[-1].legend(fontsize=6, frameon=False)

        metadata = {
            "Date": None,
            "Creator": "pathcluster",
            "Title": "decision path report",
            "Description": f"diverging colour scale clipped at +/-{report.clip:g} standardized units",
        }
        fig.savefig(path, format="svg", metadata=metadata, bbox_inches="tight")
        plt.close(fig)
