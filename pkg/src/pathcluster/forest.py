"""Decision forests: a bagged CART trainer, routing, prediction and JSON I/O.

Trees are stored as flat node tables. Numeric splits send ``x < threshold``
left; categorical splits send members of ``subset`` left. Leaf ids reported
by :func:`apply` are the node ids of the JSON node table.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dataset import CATEGORICAL, CLASS, NUMERIC, Dataset, FeatureColumn, TargetColumn
from .errors import ValidationError
from .rng import child_rng, child_seed

log = logging.getLogger(__name__)

CLASSIFICATION = "classification"
REGRESSION = "regression"


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _numeric_split(vals, ycls, yreg, classification, n_classes, min_leaf):
    """Best midpoint split of one numeric feature; returns (score, threshold)."""
    m = vals.shape[0]
    order = np.argsort(vals, kind="mergesort")
    best_score = -np.inf
    best_thr = np.nan
    if classification:
        cl = np.zeros(n_classes, np.int64)
        cr = np.zeros(n_classes, np.int64)
        for i in range(m):
            cr[ycls[i]] += 1
        sq_l = 0
        sq_r = 0
        for c in range(n_classes):
            sq_r += cr[c] * cr[c]
        for i in range(m - 1):
            c = ycls[order[i]]
            sq_l += 2 * cl[c] + 1
            cl[c] += 1
            sq_r -= 2 * cr[c] - 1
            cr[c] -= 1
            nl = i + 1
            nr = m - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            a = vals[order[i]]
            b = vals[order[i + 1]]
            if not a < b:
                continue
            score = sq_l / nl + sq_r / nr
            if score > best_score:
                best_score = score
                thr = 0.5 * (a + b)
                if not thr > a:
                    thr = b
                best_thr = thr
    else:
        total = 0.0
        for i in range(m):
            total += yreg[i]
        sl = 0.0
        for i in range(m - 1):
            sl += yreg[order[i]]
            nl = i + 1
            nr = m - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            a = vals[order[i]]
            b = vals[order[i + 1]]
            if not a < b:
                continue
            sr = total - sl
            score = sl * sl / nl + sr * sr / nr
            if score > best_score:
                best_score = score
                thr = 0.5 * (a + b)
                if not thr > a:
                    thr = b
                best_thr = thr
    return best_score, best_thr


@njit(cache=True, nogil=True)
def _categorical_split(codes, n_cat, ycls, yreg, classification, n_classes, min_leaf, left_mask):
    """Best category-subset split; fills ``left_mask`` and returns the score.

    Binary classification and regression scan prefixes of the categories
    ordered by class-1 rate / target mean; multiclass scans one-vs-rest.
    """
    m = codes.shape[0]
    counts = np.zeros(n_cat, np.int64)
    ccount = np.zeros((n_cat, max(n_classes, 1)), np.int64)
    sums = np.zeros(n_cat)
    for i in range(m):
        k = codes[i]
        counts[k] += 1
        if classification:
            ccount[k, ycls[i]] += 1
        else:
            sums[k] += yreg[i]
    present = np.empty(n_cat, np.int64)
    n_present = 0
    for k in range(n_cat):
        if counts[k] > 0:
            present[n_present] = k
            n_present += 1
    best_score = -np.inf
    if n_present < 2:
        return best_score
    present = present[:n_present]

    prefix = True
    if classification and n_classes > 2:
        prefix = False
    if prefix:
        key = np.empty(n_present)
        for j in range(n_present):
            k = present[j]
            if classification:
                key[j] = ccount[k, 1] / counts[k]
            else:
                key[j] = sums[k] / counts[k]
        ordering = present[np.argsort(key, kind="mergesort")]
        n_cand = n_present - 1
    else:
        ordering = present
        n_cand = n_present

    cl = np.zeros(max(n_classes, 1), np.int64)
    best_j = -1
    nl = 0
    sl = 0.0
    total = 0.0
    for i in range(m):
        total += yreg[i] if not classification else 0.0
    for j in range(n_cand):
        if prefix:
            k = ordering[j]
            nl += counts[k]
            if classification:
                for c in range(n_classes):
                    cl[c] += ccount[k, c]
            else:
                sl += sums[k]
        else:
            k = ordering[j]
            nl = counts[k]
            for c in range(n_classes):
                cl[c] = ccount[k, c]
        nr = m - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        if classification:
            sq_l = 0
            sq_r = 0
            for c in range(n_classes):
                tot_c = 0
                for kk in range(n_cat):
                    tot_c += ccount[kk, c]
                sq_l += cl[c] * cl[c]
                sq_r += (tot_c - cl[c]) * (tot_c - cl[c])
            score = sq_l / nl + sq_r / nr
        else:
            sr = total - sl
            score = sl * sl / nl + sr * sr / nr
        if score > best_score:
            best_score = score
            best_j = j
    if best_j >= 0:
        for k in range(left_mask.shape[0]):
            left_mask[k] = False
        if prefix:
            for j in range(best_j + 1):
                left_mask[ordering[j]] = True
        else:
            left_mask[ordering[best_j]] = True
    return best_score


@njit(cache=True, nogil=True)
def _grow(X, is_cat, n_cats, ycls, yreg, classification, n_classes, rows, max_depth, min_leaf, mtry, seed, max_cat):
    """Grow one tree on ``rows`` (indices into X, repeats allowed)."""
    np.random.seed(seed)
    n_rows = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    subset = np.zeros((cap, max_cat), np.bool_)
    width = n_classes if classification else 1
    value = np.zeros((cap, width))
    leaf_of = np.empty(n_rows, np.int32)

    order = np.arange(n_rows)
    s_node = np.empty(cap, np.int64)
    s_start = np.empty(cap, np.int64)
    s_end = np.empty(cap, np.int64)
    s_depth = np.empty(cap, np.int64)
    sp = 0
    s_node[0] = 0
    s_start[0] = 0
    s_end[0] = n_rows
    s_depth[0] = 0
    sp = 1
    n_nodes = 1
    perm = np.arange(p)
    mask = np.zeros(max_cat, np.bool_)
    best_mask = np.zeros(max_cat, np.bool_)

    while sp > 0:
        sp -= 1
        node = s_node[sp]
        start = s_start[sp]
        end = s_end[sp]
        depth = s_depth[sp]
        m = end - start
        seg_rows = rows[order[start:end]]

        pure = True
        if classification:
            for i in range(m):
                value[node, ycls[seg_rows[i]]] += 1.0
            nz = 0
            for c in range(n_classes):
                if value[node, c] > 0:
                    nz += 1
            pure = nz <= 1
            for c in range(n_classes):
                value[node, c] /= m
        else:
            s = 0.0
            for i in range(m):
                s += yreg[seg_rows[i]]
            value[node, 0] = s / m
            for i in range(1, m):
                if yreg[seg_rows[i]] != yreg[seg_rows[0]]:
                    pure = False
                    break

        split = not pure
        if max_depth >= 0 and depth >= max_depth:
            split = False
        if m < 2 * min_leaf:
            split = False

        best_f = -1
        best_score = -np.inf
        best_thr = np.nan
        if split:
            # partial Fisher-Yates for the candidate features
            for i in range(mtry):
                j = i + np.random.randint(0, p - i)
                tmp = perm[i]
                perm[i] = perm[j]
                perm[j] = tmp
            cand = np.sort(perm[:mtry])
            yc = np.empty(m, np.int64)
            yr = np.empty(m)
            for i in range(m):
                if classification:
                    yc[i] = ycls[seg_rows[i]]
                else:
                    yr[i] = yreg[seg_rows[i]]
            for f in cand:
                vals = np.empty(m)
                for i in range(m):
                    vals[i] = X[seg_rows[i], f]
                if is_cat[f]:
                    codes = vals.astype(np.int64)
                    score = _categorical_split(codes, n_cats[f], yc, yr, classification, n_classes, min_leaf, mask)
                    if score > best_score:
                        best_score = score
                        best_f = f
                        for k in range(max_cat):
                            best_mask[k] = mask[k]
                else:
                    score, thr = _numeric_split(vals, yc, yr, classification, n_classes, min_leaf)
                    if score > best_score:
                        best_score = score
                        best_f = f
                        best_thr = thr

        if best_f < 0:
            for i in range(start, end):
                leaf_of[order[i]] = node
            continue

        # stable partition of the segment: left rows first
        tmp_order = np.empty(m, np.int64)
        nl = 0
        for i in range(m):
            r = rows[order[start + i]]
            if is_cat[best_f]:
                go_left = best_mask[np.int64(X[r, best_f])]
            else:
                go_left = X[r, best_f] < best_thr
            if go_left:
                tmp_order[nl] = order[start + i]
                nl += 1
        nr = nl
        for i in range(m):
            r = rows[order[start + i]]
            if is_cat[best_f]:
                go_left = best_mask[np.int64(X[r, best_f])]
            else:
                go_left = X[r, best_f] < best_thr
            if not go_left:
                tmp_order[nr] = order[start + i]
                nr += 1
        for i in range(m):
            order[start + i] = tmp_order[i]

        feature[node] = best_f
        if is_cat[best_f]:
            for k in range(max_cat):
                subset[node, k] = best_mask[k]
        else:
            threshold[node] = best_thr
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        # push right first so the left child is expanded next
        s_node[sp] = rid
        s_start[sp] = start + nl
        s_end[sp] = end
        s_depth[sp] = depth + 1
        sp += 1
        s_node[sp] = lid
        s_start[sp] = start
        s_end[sp] = start + nl
        s_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        subset[:n_nodes].copy(),
        value[:n_nodes].copy(),
        leaf_of,
    )


@njit(cache=True, nogil=True)
def _route(X, is_cat, feature, threshold, left, right, subset, root, out):
    n = X.shape[0]
    for i in range(n):
        node = root
        while feature[node] >= 0:
            f = feature[node]
            if is_cat[f]:
                go_left = subset[node, np.int64(X[i, f])]
            else:
                go_left = X[i, f] < threshold[node]
            node = left[node] if go_left else right[node]
        out[i] = node


# ---------------------------------------------------------------------------
# model types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    categories: tuple = ()


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node table. Arrays are indexed by position; ``node_ids`` maps to JSON ids.

    ``feature`` is -1 for leaves. ``subset`` is a boolean (nodes x categories)
    table marking the categories routed left at categorical splits.
    """

    node_ids: np.ndarray
    root: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    subset: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple
    features: tuple
    task: str
    classes: tuple = ()

    @property
    def n_trees(self):
        return len(self.trees)

    @property
    def is_constant(self):
        """True when every tree is a single leaf."""
        return all(t.n_nodes == 1 for t in self.trees)

    def __eq__(self, other):
        if not isinstance(other, ForestModel):
            return NotImplemented
        return to_dict(self) == to_dict(other)


@dataclass(frozen=True)
class TrainConfig:
    """Training parameters.

    ``max_features`` is ``"sqrt"``, ``"log2"``, ``"all"`` or an integer count.
    ``bootstrap_fraction`` is the number of rows drawn with replacement per
    tree, as a fraction of the dataset.
    """

    n_trees: int = 100
    max_depth: int | None = None
    max_features: str | int = "sqrt"
    bootstrap_fraction: float = 1.0
    min_samples_leaf: int = 1
    seed: int = 0
    task: str | None = None

    def validate(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ValidationError("bootstrap_fraction must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValidationError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        if isinstance(self.max_features, str):
            if self.max_features not in ("sqrt", "log2", "all"):
                raise ValidationError(f"unknown max_features {self.max_features!r}")
        elif int(self.max_features) < 1:
            raise ValidationError("max_features must be >= 1")
        if self.task not in (None, CLASSIFICATION, REGRESSION):
            raise ValidationError(f"unknown task {self.task!r}")


def _n_candidate_features(max_features, p):
    if max_features == "sqrt":
        return max(1, int(math.sqrt(p)))
    if max_features == "log2":
        return max(1, int(math.log2(p)))
    if max_features == "all":
        return p
    return min(p, int(max_features))


def _feature_arrays(features):
    is_cat = np.array([f.kind == CATEGORICAL for f in features], dtype=np.bool_)
    n_cats = np.array([len(f.categories) for f in features], dtype=np.int64)
    max_cat = max(1, int(n_cats.max()) if len(n_cats) else 1)
    return is_cat, n_cats, max_cat


def _specs(dataset):
    return tuple(FeatureSpec(c.name, c.kind, c.categories) for c in dataset.columns)


def grow_tree(X, y, features, task, rows, config, seed, n_classes=0):
    """Grow a single tree; returns ``(Tree, leaf ids of rows)``.

    The second value records, for every entry of ``rows``, the leaf it landed
    in while training.
    """
    is_cat, n_cats, max_cat = _feature_arrays(features)
    classification = task == CLASSIFICATION
    ycls = np.asarray(y, dtype=np.int64) if classification else np.zeros(1, np.int64)
    yreg = np.zeros(1) if classification else np.asarray(y, dtype=np.float64)
    mtry = _n_candidate_features(config.max_features, X.shape[1])
    depth = -1 if config.max_depth is None else int(config.max_depth)
    feature, threshold, left, right, subset, value, leaf_of = _grow(
        X, is_cat, n_cats, ycls, yreg, classification, max(n_classes, 1),
        np.asarray(rows, dtype=np.int64), depth, int(config.min_samples_leaf), mtry, seed, max_cat,
    )
    if not classification:
        value = value[:, 0].copy()
    tree = Tree(np.arange(len(feature), dtype=np.int64), 0, feature, threshold, left, right, subset, value)
    return tree, leaf_of


def train(dataset, config=None, threads=1):
    """Fit a bagged CART forest.

    Classification trees minimize Gini impurity, regression trees minimize
    squared error. Each tree sees ``round(bootstrap_fraction * n)`` rows drawn
    with replacement and a fresh random feature subset at every split. Ties
    between candidate splits go to the lowest feature index, then the lowest
    threshold. The result depends only on ``config.seed``, not on ``threads``.
    """
    config = config or TrainConfig()
    config.validate()
    if dataset.target is None:
        raise ValidationError("training requires a target column")
    task = CLASSIFICATION if dataset.target.is_class else REGRESSION
    if config.task is not None and config.task != task:
        raise ValidationError(f"config task {config.task!r} does not match the {task} target")
    n = dataset.row_count
    if n < 2:
        raise ValidationError("training requires at least two rows")

    X = np.ascontiguousarray(dataset.matrix())
    y = dataset.target.values
    features = _specs(dataset)
    n_classes = len(dataset.target.classes) if task == CLASSIFICATION else 0
    n_draw = max(1, int(round(config.bootstrap_fraction * n)))

    def one(t):
        rows = child_rng(config.seed, "bootstrap", t).integers(0, n, size=n_draw)
        tree, _ = grow_tree(X, y, features, task, rows, config, child_seed(config.seed, "split", t), n_classes)
        return tree

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = tuple(pool.map(one, range(config.n_trees)))
    else:
        trees = tuple(one(t) for t in range(config.n_trees))
    model = ForestModel(trees, features, task, dataset.target.classes if task == CLASSIFICATION else ())
    if model.is_constant:
        log.warning("every tree is a single leaf; the forest is a constant model")
    return model


def _aligned_matrix(model, dataset):
    """Feature matrix of ``dataset`` in the model's coding, after schema checks."""
    if len(dataset.columns) != len(model.features):
        raise ValidationError(
            f"dataset has {len(dataset.columns)} features, model expects {len(model.features)}"
        )
    cols = []
    for spec, col in zip(model.features, dataset.columns):
        if spec.name != col.name or spec.kind != col.kind:
            raise ValidationError(
                f"feature mismatch: model has {spec.name!r} ({spec.kind}), dataset has {col.name!r} ({col.kind})"
            )
        if spec.kind == CATEGORICAL:
            lookup = {c: i for i, c in enumerate(spec.categories)}
            unknown = [c for c in col.categories if c not in lookup]
            if unknown:
                raise ValidationError(f"feature {col.name!r} has categories unknown to the model: {unknown}")
            remap = np.array([lookup[c] for c in col.categories], dtype=np.int64)
            cols.append(remap[col.values].astype(np.float64))
        else:
            cols.append(col.values)
    return np.ascontiguousarray(np.column_stack(cols))


def _leaf_positions(model, X, threads=1):
    is_cat, _, _ = _feature_arrays(model.features)

    def one(tree):
        out = np.empty(X.shape[0], np.int64)
        _route(X, is_cat, tree.feature, tree.threshold, tree.left, tree.right, tree.subset, tree.root, out)
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cols = list(pool.map(one, model.trees))
    else:
        cols = [one(t) for t in model.trees]
    return cols


def apply(model, dataset, threads=1):
    """Terminal-node ids, shape ``(n_samples, n_trees)``.

    Returns a :class:`pathcluster.proximity.LeafMatrix`.
    """
    from .proximity import LeafMatrix

    X = _aligned_matrix(model, dataset)
    positions = _leaf_positions(model, X, threads)
    ids = np.column_stack([t.node_ids[p] for t, p in zip(model.trees, positions)]).astype(np.int64)
    return LeafMatrix(ids)


def predict(model, dataset):
    """Majority vote (classification) or mean of leaf means (regression).

    Each tree votes for its leaf's most frequent class; ties at either level
    go to the class that sorts first.
    """
    X = _aligned_matrix(model, dataset)
    positions = _leaf_positions(model, X)
    if model.task == REGRESSION:
        return np.mean(np.column_stack([t.value[p] for t, p in zip(model.trees, positions)]), axis=1)
    votes = np.zeros((X.shape[0], len(model.classes)), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree, pos in zip(model.trees, positions):
        votes[rows, np.argmax(tree.value[pos], axis=1)] += 1
    winners = np.argmax(votes, axis=1)
    return np.array([model.classes[w] for w in winners], dtype=object)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def to_dict(model):
    features = []
    for f in model.features:
        entry = {"name": f.name, "kind": f.kind}
        if f.kind == CATEGORICAL:
            entry["categories"] = list(f.categories)
        features.append(entry)
    trees = []
    for t in model.trees:
        nodes = []
        for pos in range(t.n_nodes):
            nid = int(t.node_ids[pos])
            if t.feature[pos] < 0:
                if model.task == CLASSIFICATION:
                    value = [float(v) for v in t.value[pos]]
                else:
                    value = float(t.value[pos])
                nodes.append({"id": nid, "kind": "leaf", "value": value})
                continue
            f = int(t.feature[pos])
            node = {"id": nid, "kind": "split", "feature": f}
            if model.features[f].kind == CATEGORICAL:
                node["subset"] = [int(c) for c in np.flatnonzero(t.subset[pos, : len(model.features[f].categories)])]
            else:
                node["threshold"] = float(t.threshold[pos])
            node["left"] = int(t.node_ids[t.left[pos]])
            node["right"] = int(t.node_ids[t.right[pos]])
            nodes.append(node)
        trees.append({"root": int(t.node_ids[t.root]), "nodes": nodes})
    out = {"task": model.task, "n_trees": model.n_trees, "features": features}
    if model.task == CLASSIFICATION:
        out["classes"] = list(model.classes)
    out["trees"] = trees
    return out


def save_forest(model):
    """Serialize to compact JSON bytes (floats round-trip exactly)."""
    return json.dumps(to_dict(model), separators=(",", ":")).encode("utf-8")


def _require(cond, message):
    if not cond:
        raise ValidationError(message)


def _tree_from_dict(raw, ti, features, task, n_classes):
    where = f"tree {ti}"
    _require(isinstance(raw, dict) and "nodes" in raw and "root" in raw, f"{where}: needs 'root' and 'nodes'")
    nodes = raw["nodes"]
    _require(isinstance(nodes, list) and nodes, f"{where}: 'nodes' must be a non-empty list")
    pos_of = {}
    for pos, node in enumerate(nodes):
        _require(isinstance(node, dict) and isinstance(node.get("id"), int), f"{where}: node {pos} needs an integer id")
        _require(node["id"] not in pos_of, f"{where}: duplicate node id {node['id']}")
        pos_of[node["id"]] = pos
    _require(raw["root"] in pos_of, f"{where}: root id {raw['root']} not in node table")

    m = len(nodes)
    max_cat = max([1] + [len(f.categories) for f in features])
    feature = np.full(m, -1, np.int32)
    threshold = np.zeros(m)
    left = np.full(m, -1, np.int32)
    right = np.full(m, -1, np.int32)
    subset = np.zeros((m, max_cat), np.bool_)
    value = np.zeros((m, n_classes)) if task == CLASSIFICATION else np.zeros(m)
    for pos, node in enumerate(nodes):
        nw = f"{where}, node {node['id']}"
        kind = node.get("kind")
        if kind == "leaf":
            _require("left" not in node and "right" not in node, f"{nw}: leaves have no children")
            v = node.get("value")
            if task == CLASSIFICATION:
                _require(isinstance(v, list) and len(v) == n_classes, f"{nw}: value must list {n_classes} class weights")
                _require(all(isinstance(x, (int, float)) and math.isfinite(x) for x in v), f"{nw}: non-finite leaf value")
                value[pos] = v
            else:
                _require(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v), f"{nw}: value must be a number")
                value[pos] = v
        elif kind == "split":
            f = node.get("feature")
            _require(isinstance(f, int) and 0 <= f < len(features), f"{nw}: feature index out of range")
            for side in ("left", "right"):
                _require(node.get(side) in pos_of, f"{nw}: {side} child missing or unknown")
            feature[pos] = f
            left[pos] = pos_of[node["left"]]
            right[pos] = pos_of[node["right"]]
            if features[f].kind == CATEGORICAL:
                sub = node.get("subset")
                _require(isinstance(sub, list) and "threshold" not in node, f"{nw}: categorical split needs 'subset'")
                for c in sub:
                    _require(isinstance(c, int) and 0 <= c < len(features[f].categories), f"{nw}: bad category {c!r}")
                    subset[pos, c] = True
            else:
                thr = node.get("threshold")
                _require(isinstance(thr, (int, float)) and not isinstance(thr, bool) and math.isfinite(thr), f"{nw}: numeric split needs a finite 'threshold'")
                threshold[pos] = thr
        else:
            raise ValidationError(f"{nw}: kind must be 'split' or 'leaf'")

    # every node reachable exactly once from the root
    seen = np.zeros(m, dtype=bool)
    stack = [pos_of[raw["root"]]]
    while stack:
        pos = stack.pop()
        _require(not seen[pos], f"{where}: node {nodes[pos]['id']} reached twice (cycle or shared child)")
        seen[pos] = True
        if feature[pos] >= 0:
            stack.extend((right[pos], left[pos]))
    _require(seen.all(), f"{where}: unreachable nodes {[nodes[p]['id'] for p in np.flatnonzero(~seen)]}")

    ids = np.array([node["id"] for node in nodes], dtype=np.int64)
    return Tree(ids, pos_of[raw["root"]], feature, threshold, left, right, subset, value)


def from_dict(raw):
    _require(isinstance(raw, dict), "forest JSON must be an object")
    task = raw.get("task")
    _require(task in (CLASSIFICATION, REGRESSION), f"unknown task {task!r}")
    feats = raw.get("features")
    _require(isinstance(feats, list) and feats, "'features' must be a non-empty list")
    features = []
    for i, f in enumerate(feats):
        _require(isinstance(f, dict) and isinstance(f.get("name"), str) and f["name"], f"feature {i}: needs a name")
        kind = f.get("kind")
        _require(kind in (NUMERIC, CATEGORICAL), f"feature {i}: kind must be numeric or categorical")
        cats = ()
        if kind == CATEGORICAL:
            cats = f.get("categories")
            _require(isinstance(cats, list) and cats, f"feature {i}: categorical needs 'categories'")
            cats = tuple(str(c) for c in cats)
        features.append(FeatureSpec(f["name"], kind, cats))
    _require(len({f.name for f in features}) == len(features), "feature names must be unique")
    classes = ()
    if task == CLASSIFICATION:
        classes = raw.get("classes")
        _require(isinstance(classes, list) and len(classes) >= 2, "classification forests need >= 2 classes")
        classes = tuple(str(c) for c in classes)
    trees = raw.get("trees")
    _require(isinstance(trees, list) and trees, "'trees' must be a non-empty list")
    _require(raw.get("n_trees") == len(trees), f"n_trees={raw.get('n_trees')!r} but {len(trees)} trees given")
    parsed = tuple(_tree_from_dict(t, i, features, task, len(classes)) for i, t in enumerate(trees))
    return ForestModel(parsed, tuple(features), task, classes)


def load_forest(data):
    """Parse and validate forest JSON (``bytes`` or ``str``)."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"forest JSON is malformed: {exc}") from None
    return from_dict(raw)


# ---------------------------------------------------------------------------
# unsupervised baseline support
# ---------------------------------------------------------------------------


def synthesize_noise(dataset, seed, n_rows=None):
    """Resample every column independently from its own empirical values.

    The marginals are kept, cross-feature dependence is destroyed. The target
    is dropped.
    """
    n = dataset.row_count
    size = n if n_rows is None else int(n_rows)
    columns = []
    for j, col in enumerate(dataset.columns):
        idx = child_rng(seed, "noise", j).integers(0, n, size=size)
        columns.append(FeatureColumn(col.name, col.kind, col.values[idx], col.categories))
    return Dataset(tuple(columns))


def real_vs_noise(dataset, seed, noise_ratio=1.0):
    """Stack ``dataset`` and a synthetic copy with an ``origin`` class target.

    The first ``dataset.row_count`` rows are the real ones.
    """
    noise = synthesize_noise(dataset, seed, n_rows=int(round(noise_ratio * dataset.row_count)))
    columns = tuple(
        FeatureColumn(r.name, r.kind, np.concatenate([r.values, s.values]), r.categories)
        for r, s in zip(dataset.columns, noise.columns)
    )
    codes = np.concatenate([np.zeros(dataset.row_count, np.int64), np.ones(noise.row_count, np.int64)])
    return Dataset(columns, TargetColumn("origin", CLASS, codes, ("real", "synthetic")))
