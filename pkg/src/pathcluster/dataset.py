"""Tabular data model, CSV ingestion, the simulated benchmark and ARI.

Columns are stored as numpy arrays. Categorical features keep integer codes
into a sorted label tuple; class targets do the same with their class labels.
Cluster labels are 0-based everywhere in memory and written 1-based to disk.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .rng import child_rng

NUMERIC = "numeric"
CATEGORICAL = "categorical"
CLASS = "class"
TARGET_NUMERIC = "target_numeric"
SCHEMA_KINDS = (NUMERIC, CATEGORICAL, CLASS, TARGET_NUMERIC)


@dataclass(frozen=True, eq=False)
class FeatureColumn:
    """One feature. ``values`` holds floats (numeric) or codes into ``categories``."""

    name: str
    kind: str
    values: np.ndarray
    categories: tuple = ()

    def __post_init__(self):
        if not self.name:
            raise ValidationError("feature names must be non-empty")
        if self.kind == NUMERIC:
            values = np.asarray(self.values, dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"numeric feature {self.name!r} has non-finite values")
        elif self.kind == CATEGORICAL:
            values = np.asarray(self.values, dtype=np.int64)
            if len(self.categories) == 0:
                raise ValidationError(f"categorical feature {self.name!r} has no categories")
            if values.size and (values.min() < 0 or values.max() >= len(self.categories)):
                raise ValidationError(f"categorical feature {self.name!r} has codes outside its label set")
        else:
            raise ValidationError(f"unknown feature kind {self.kind!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))

    @classmethod
    def categorical(cls, name, labels):
        """Build a categorical column from raw labels (label set is sorted)."""
        labels = [str(v) for v in labels]
        categories = tuple(sorted(set(labels)))
        lookup = {c: i for i, c in enumerate(categories)}
        return cls(name, CATEGORICAL, np.array([lookup[v] for v in labels], dtype=np.int64), categories)

    @property
    def is_numeric(self):
        return self.kind == NUMERIC

    def labels(self):
        """Per-row values as strings (categorical) or floats (numeric)."""
        if self.is_numeric:
            return self.values.tolist()
        return [self.categories[c] for c in self.values]

    def take(self, rows):
        return FeatureColumn(self.name, self.kind, self.values[rows], self.categories)

    def __eq__(self, other):
        if not isinstance(other, FeatureColumn):
            return NotImplemented
        return (
            self.name == other.name
            and self.kind == other.kind
            and self.categories == other.categories
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class TargetColumn:
    """Class labels (codes into ``classes``) or a numeric response."""

    name: str
    kind: str
    values: np.ndarray
    classes: tuple = ()

    def __post_init__(self):
        if self.kind == CLASS:
            values = np.asarray(self.values, dtype=np.int64)
            if len(self.classes) < 2:
                raise ValidationError("class targets need at least two classes")
            if values.size and (values.min() < 0 or values.max() >= len(self.classes)):
                raise ValidationError("class codes outside the declared classes")
        elif self.kind == NUMERIC:
            values = np.asarray(self.values, dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise ValidationError("numeric target has non-finite values")
        else:
            raise ValidationError(f"unknown target kind {self.kind!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))

    @classmethod
    def from_labels(cls, name, labels):
        labels = [str(v) for v in labels]
        classes = tuple(sorted(set(labels)))
        lookup = {c: i for i, c in enumerate(classes)}
        return cls(name, CLASS, np.array([lookup[v] for v in labels], dtype=np.int64), classes)

    @property
    def is_class(self):
        return self.kind == CLASS

    def labels(self):
        if self.is_class:
            return [self.classes[c] for c in self.values]
        return self.values.tolist()

    def take(self, rows):
        return TargetColumn(self.name, self.kind, self.values[rows], self.classes)

    def __eq__(self, other):
        if not isinstance(other, TargetColumn):
            return NotImplemented
        return (
            self.name == other.name
            and self.kind == other.kind
            and self.classes == other.classes
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class Dataset:
    columns: tuple
    target: TargetColumn | None = None

    def __post_init__(self):
        columns = tuple(self.columns)
        object.__setattr__(self, "columns", columns)
        if not columns:
            raise ValidationError("a dataset needs at least one feature column")
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise ValidationError("feature names must be unique")
        n = len(columns[0].values)
        for c in columns:
            if len(c.values) != n:
                raise ValidationError(f"column {c.name!r} has length {len(c.values)}, expected {n}")
        if self.target is not None:
            if len(self.target.values) != n:
                raise ValidationError("target length does not match the feature columns")
            if self.target.name in names:
                raise ValidationError("target name collides with a feature name")

    @property
    def row_count(self):
        return len(self.columns[0].values)

    @property
    def feature_names(self):
        return [c.name for c in self.columns]

    @property
    def n_features(self):
        return len(self.columns)

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def matrix(self):
        """Features as a float64 array; categorical columns contribute their codes."""
        return np.column_stack([c.values.astype(np.float64) for c in self.columns])

    def take(self, rows):
        rows = np.asarray(rows)
        target = self.target.take(rows) if self.target is not None else None
        return Dataset(tuple(c.take(rows) for c in self.columns), target)

    def with_target(self, target):
        return Dataset(self.columns, target)


@dataclass(frozen=True)
class Partition:
    """Cluster labels ``0..k-1`` for every row; every label is used."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValidationError("partition labels must be one-dimensional")
        if labels.size:
            used = np.unique(labels)
            if used[0] != 0 or used[-1] != len(used) - 1:
                raise ValidationError("partition labels must use every index in 0..k-1")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels):
        """Relabel arbitrary hashable labels to ``0..k-1`` by sorted order."""
        _, inverse = np.unique(np.asarray(labels), return_inverse=True)
        return cls(inverse.ravel())

    @property
    def k(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.labels, other.labels)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def read_schema(path):
    """Read a ``column=kind`` sidecar file. Blank lines and ``#`` comments are ignored."""
    schema = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError("schema line is not key=value", row=lineno)
            key, kind = (s.strip() for s in line.split("=", 1))
            if kind not in SCHEMA_KINDS:
                raise ParseError(f"unknown column kind {kind!r}", row=lineno, column=key)
            if key in schema:
                raise ParseError("column declared twice", row=lineno, column=key)
            schema[key] = kind
    return schema


def write_schema(dataset, path):
    lines = [f"{c.name}={c.kind}" for c in dataset.columns]
    if dataset.target is not None:
        kind = CLASS if dataset.target.is_class else TARGET_NUMERIC
        lines.append(f"{dataset.target.name}={kind}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def schema_path_for(csv_path):
    """Default sidecar location: ``data.csv`` -> ``data.schema``."""
    return Path(csv_path).with_suffix(".schema")


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite number {text!r}", row=row, column=column)
    return value


def load_csv(path, schema=None):
    """Load a comma-separated file with an explicit column schema.

    Parameters
    ----------
    path : path-like
        UTF-8 file with a header row.
    schema : dict or path-like, optional
        Mapping of column name to kind (``numeric``, ``categorical``, ``class``,
        ``target_numeric``), or a sidecar file. Defaults to the ``.schema``
        file next to ``path``.

    Row numbers in errors count the header as row 1.
    """
    if schema is None:
        schema = schema_path_for(path)
    if not isinstance(schema, dict):
        schema = read_schema(schema)
    targets = [k for k, v in schema.items() if v in (CLASS, TARGET_NUMERIC)]
    if len(targets) > 1:
        raise ValidationError(f"at most one target column allowed, got {targets}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", row=1) from None
        header = [h.strip() for h in header]
        for name in header:
            if name not in schema:
                raise ParseError("column not declared in schema", row=1, column=name)
        missing = [k for k in schema if k not in header]
        if missing:
            raise ParseError(f"schema columns missing from header: {missing}", row=1)
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names in header", row=1)

        raw = {name: [] for name in header}
        for rowno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", row=rowno)
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    raise ParseError("missing cell", row=rowno, column=name)
                kind = schema[name]
                if kind in (NUMERIC, TARGET_NUMERIC):
                    raw[name].append(_parse_float(cell, rowno, name))
                else:
                    raw[name].append(cell)

    columns = []
    target = None
    for name in header:
        kind = schema[name]
        if kind == NUMERIC:
            columns.append(FeatureColumn(name, NUMERIC, np.array(raw[name], dtype=np.float64)))
        elif kind == CATEGORICAL:
            columns.append(FeatureColumn.categorical(name, raw[name]))
        elif kind == CLASS:
            if len(set(raw[name])) < 2:
                raise ValidationError(f"class target {name!r} needs at least two distinct labels")
            target = TargetColumn.from_labels(name, raw[name])
        else:
            target = TargetColumn(name, NUMERIC, np.array(raw[name], dtype=np.float64))
    return Dataset(tuple(columns), target)


def write_csv(dataset, path, schema_path=None):
    """Write ``dataset`` and its schema sidecar. Floats use ``repr`` so they round-trip."""
    path = Path(path)
    names = dataset.feature_names
    cells = [c.labels() for c in dataset.columns]
    if dataset.target is not None:
        names = names + [dataset.target.name]
        cells.append(dataset.target.labels())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*cells):
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    write_schema(dataset, schema_path or schema_path_for(path))


def write_partition(partition, path):
    """Two-column CSV ``row_index,cluster`` with 1-based cluster ids."""
    labels = partition.labels if isinstance(partition, Partition) else np.asarray(partition)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_index", "cluster"])
        for i, c in enumerate(labels):
            writer.writerow([i, int(c) + 1])


def read_partition(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["row_index", "cluster"]:
            raise ParseError("expected header row_index,cluster", row=1)
        labels = []
        for rowno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                idx, cluster = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise ParseError("malformed partition row", row=rowno) from None
            if idx != len(labels):
                raise ParseError("row indices must be consecutive from 0", row=rowno)
            labels.append(cluster - 1)
    return Partition(np.array(labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# Simulated benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationParams:
    """Parameters of the two-class, four-subclass benchmark.

    Class ``1`` is split into three subclasses, each shifted along its own
    informative feature; class ``2`` sits at the origin, so telling it apart
    from a subclass needs that subclass's feature and no single feature
    separates the classes. Means and spreads are per informative feature.
    """

    subclass_sizes: tuple = (100, 100, 200)
    subclass_means: tuple = ((8.0, 0.0, 0.0), (0.0, 8.0, 0.0), (0.0, 0.0, 8.0))
    subclass_spreads: tuple = ((1.0, 1.0, 1.0), (1.0, 1.0, 1.0), (1.0, 1.0, 1.0))
    class2_size: int = 200
    class2_means: tuple = (0.0, 0.0, 0.0)
    class2_spreads: tuple = (1.0, 1.0, 1.0)
    noise_spread: float = 1.0
    binary_rate: float = 0.5

    def validate(self):
        sizes = list(self.subclass_sizes) + [self.class2_size]
        if any(s <= 0 for s in sizes):
            raise ValidationError("subclass and class sizes must be positive")
        spreads = [v for row in self.subclass_spreads for v in row] + list(self.class2_spreads)
        if any(s <= 0 for s in spreads) or self.noise_spread <= 0:
            raise ValidationError("spreads must be positive")
        if len(self.subclass_means) != len(self.subclass_sizes) or len(self.subclass_spreads) != len(self.subclass_sizes):
            raise ValidationError("one mean/spread row per subclass required")
        widths = {len(r) for r in self.subclass_means} | {len(r) for r in self.subclass_spreads}
        widths |= {len(self.class2_means), len(self.class2_spreads)}
        if len(widths) != 1:
            raise ValidationError("every mean/spread row needs one entry per informative feature")
        if not 0.0 < self.binary_rate < 1.0:
            raise ValidationError("binary_rate must lie in (0, 1)")


def simulate_benchmark(seed, params=None):
    """Generate the benchmark table and its ground-truth subclass partition.

    Features are ``feature_1..feature_m`` (informative, Gaussian), then a
    standard-Gaussian noise feature and a binary categorical noise feature.
    The target column ``label`` has classes ``"1"`` and ``"2"``. Rows are
    shuffled. Ground-truth labels are subclasses in declaration order with
    class 2 last.
    """
    params = params or SimulationParams()
    params.validate()
    rng = child_rng(seed, "simulate")
    n_inf = len(params.class2_means)

    blocks, truth, classes = [], [], []
    groups = list(zip(params.subclass_sizes, params.subclass_means, params.subclass_spreads))
    groups.append((params.class2_size, params.class2_means, params.class2_spreads))
    for g, (size, means, spreads) in enumerate(groups):
        blocks.append(rng.normal(np.asarray(means, dtype=float), np.asarray(spreads, dtype=float), size=(size, n_inf)))
        truth.append(np.full(size, g))
        classes.append(np.full(size, 1 if g < len(params.subclass_sizes) else 2))
    informative = np.vstack(blocks)
    truth = np.concatenate(truth)
    classes = np.concatenate(classes)
    n = len(truth)

    noise = rng.normal(0.0, params.noise_spread, size=n)
    binary = (rng.random(n) < params.binary_rate).astype(np.int64)
    order = rng.permutation(n)

    columns = [FeatureColumn(f"feature_{j + 1}", NUMERIC, informative[order, j]) for j in range(n_inf)]
    columns.append(FeatureColumn(f"feature_{n_inf + 1}", NUMERIC, noise[order]))
    columns.append(FeatureColumn(f"feature_{n_inf + 2}", CATEGORICAL, binary[order], ("0", "1")))
    target = TargetColumn("label", CLASS, classes[order] - 1, ("1", "2"))
    return Dataset(tuple(columns), target), Partition(truth[order])


# ---------------------------------------------------------------------------
# Standardization and ARI
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnStats:
    mean: float
    std: float
    constant: bool = False


def standardize(dataset):
    """Zero-mean, unit-variance numeric columns (population std, ``1/n``).

    Constant columns become all zeros and are flagged. Categorical columns
    pass through unchanged.

    Returns
    -------
    (Dataset, dict)
        The transformed dataset and ``{name: ColumnStats}`` for numeric columns.
    """
    columns, stats = [], {}
    for c in dataset.columns:
        if not c.is_numeric:
            columns.append(c)
            continue
        mean = float(np.mean(c.values))
        std = float(np.std(c.values))
        constant = std == 0.0 or np.all(c.values == c.values[0])
        if constant:
            values = np.zeros_like(c.values)
        else:
            values = (c.values - mean) / std
        stats[c.name] = ColumnStats(mean, std, bool(constant))
        columns.append(FeatureColumn(c.name, c.kind, values))
    return Dataset(tuple(columns), dataset.target), stats


def _as_labels(p):
    return p.labels if isinstance(p, Partition) else np.asarray(p)


def contingency_table(a, b):
    a, b = _as_labels(a), _as_labels(b)
    if len(a) != len(b):
        raise ValidationError(f"partitions differ in length: {len(a)} vs {len(b)}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ai, bi = ai.ravel(), bi.ravel()
    table = np.zeros((ai.max() + 1 if ai.size else 0, bi.max() + 1 if bi.size else 0), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def adjusted_rand_index(a, b):
    """Adjusted Rand index (permutation model) between two labelings.

    Returns 1.0 when the index is undefined because both labelings are
    trivial in the same way (e.g. both a single cluster).
    """
    table = contingency_table(a, b)
    n = int(table.sum())
    if n < 2:
        return 1.0

    def pairs(x):
        x = np.asarray(x, dtype=np.int64)
        return int(np.sum(x * (x - 1) // 2))

    index = pairs(table)
    rows = pairs(table.sum(axis=1))
    cols = pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    expected = rows * cols / total
    maximum = 0.5 * (rows + cols)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))
