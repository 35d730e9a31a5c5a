import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathcluster.dataset import TargetColumn
from pathcluster.errors import ValidationError
from pathcluster.kmedoids import ClusteringResult
from pathcluster.model_selection import (
    ClusterMethod,
    SelectionConfig,
    best_match_jaccard,
    classification_bias,
    cluster_stability,
    regression_bias,
    report_from_table,
    select_k,
    summarize_stability,
)
from pathcluster.proximity import LeafMatrix


def cls(values, classes=("a", "b")):
    return TargetColumn("y", "class", np.asarray(values), classes)


def num(values):
    return TargetColumn("y", "numeric", np.asarray(values, dtype=float))


def blobs(n_per=30, n_trees=40, purity=0.95, seed=0):
    """Two groups whose samples mostly share a group leaf in every tree."""
    rng = np.random.default_rng(seed)
    group = np.repeat([0, 1], n_per)
    home = np.array([np.zeros(n_trees), np.ones(n_trees)], dtype=int)
    stray = rng.integers(2, 50, size=(2 * n_per, n_trees))
    ids = np.where(rng.random((2 * n_per, n_trees)) < purity, home[group], stray)
    return LeafMatrix(ids), group


# -- bias --------------------------------------------------------------------


def test_pure_clusters_have_zero_bias():
    assert classification_bias([0, 0, 1, 1, 2], cls([0, 0, 1, 1, 1])).bias == 0.0


def test_prior_matching_cluster_term_is_half():
    report = classification_bias([0] * 4, cls([0, 1, 0, 1]))
    assert report.terms[0] == 0.5


def test_imbalanced_prior_is_reweighted():
    y = [0] * 9 + [1]
    report = classification_bias([0] * 10, cls(y))
    np.testing.assert_allclose(report.priors, [0.9, 0.1])
    np.testing.assert_allclose(report.balanced[0], [0.5, 0.5], atol=1e-15)
    assert report.terms[0] == pytest.approx(0.5, abs=1e-15)


def test_absent_class_is_rejected():
    with pytest.raises(ValidationError, match="absent"):
        classification_bias([0, 1], cls([0, 0], ("a", "b", "c")))


def test_regression_endpoints():
    y = num([0, 0, 10, 10])
    assert regression_bias([0, 0, 1, 1], y).bias == 0.0
    assert regression_bias([0, 1, 0, 1], y).bias == pytest.approx(1.0, abs=1e-12)
    assert regression_bias([0, 1, 2, 3], y).bias == 0.0
    assert regression_bias([0, 0, 0, 0], y).bias == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        regression_bias([0, 1, 0, 1], num([3, 3, 3, 3]))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 2)), min_size=6, max_size=60))
def test_bias_bounds(pairs):
    labels = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    if len(set(y)) < 3 or len(set(labels)) != labels.max() + 1:
        return
    report = classification_bias(labels, cls(y, ("a", "b", "c")))
    assert np.all(report.terms >= -1e-12) and np.all(report.terms <= 1 - 1 / 3 + 1e-12)
    np.testing.assert_allclose(report.balanced.sum(axis=1), 1.0)


# -- stability ---------------------------------------------------------------


def test_aggregation():
    report = summarize_stability([0.99, 0.98, 0.87, 0.72, 0.91], threshold=0.9)
    assert report.mean_jaccard == pytest.approx(0.894, abs=1e-12)
    assert not report.stable
    with pytest.raises(ValidationError):
        summarize_stability([1.2])


def test_best_match_jaccard():
    original = np.array([0, 0, 0, 1, 1, 2])
    resampled = np.array([1, 1, 0, 0, 0, 0])
    scores = best_match_jaccard(original, resampled, 4)
    np.testing.assert_allclose(scores[:3], [2 / 3, 2 / 4, 1 / 4])
    assert np.isnan(scores[3])


def test_full_fraction_reproduces_itself():
    leaf, _ = blobs(purity=0.8)
    method = ClusterMethod()
    base = method.run(leaf, 2)
    report = cluster_stability(leaf, base, iters=5, fraction=1.0, method=method)
    assert report.scores.tolist() == [1.0, 1.0]


def test_two_blobs_are_stable():
    leaf, _ = blobs()
    base = ClusterMethod().run(leaf, 2)
    assert cluster_stability(leaf, base, iters=20).mean_jaccard >= 0.95


def test_with_replacement_and_clara_paths():
    leaf, _ = blobs()
    for method in (ClusterMethod(), ClusterMethod(algorithm="clara", clara_subsample=20)):
        base = method.run(leaf, 2)
        report = cluster_stability(leaf, base, iters=5, method=method, with_replacement=True)
        assert report.with_replacement and 0 <= report.mean_jaccard <= 1


# -- choosing k --------------------------------------------------------------

PUBLISHED_SELECTION = {
    2: 0.0073, 3: 0.0048, 4: 0.0027, 5: 0.0010, 6: 0.00062,
    7: 0.00053, 8: 0.00046, 9: 0.00041, 10: 0.00037,
}


def test_table_selection():
    table = {k: (bias, [0.95] * k if k not in (5, 9, 10) else [0.5] * k) for k, bias in PUBLISHED_SELECTION.items()}
    report = report_from_table(table, 0.9)
    assert report.chosen_k == 8
    assert [e.k for e in report.entries if not e.stable] == [5, 9, 10]


def test_nothing_stable():
    report = report_from_table({2: (0.1, [0.2, 0.3]), 3: (0.05, [0.4, 0.1, 0.2])}, 0.6)
    assert report.chosen_k is None and report.chosen is None
    assert "k=2" in report.diagnostic


def test_ties_go_to_smaller_k():
    report = report_from_table({3: (0.1, [1.0] * 3), 2: (0.1, [1.0] * 2)}, 0.6)
    assert report.chosen_k == 2


def test_select_k_blobs_and_reproducible():
    leaf, group = blobs()
    target = cls(group)
    config = SelectionConfig(iters=10, seed=3)
    a = select_k(leaf, target, range(2, 5), config=config)
    b = select_k(leaf, target, range(2, 5), config=config, threads=3)
    assert a.chosen_k == 2
    assert a.to_dict() == b.to_dict()
    assert isinstance(a.chosen.clustering, ClusteringResult)
    table = a.to_dict()["table"]
    assert [row["k"] for row in table] == [2, 3, 4]
    assert set(table[0]) == {"k", "score", "stable", "mean_jaccard", "cluster_jaccard"}


def test_select_k_validation():
    leaf, group = blobs()
    with pytest.raises(ValidationError):
        select_k(leaf, cls(group), [])
    with pytest.raises(ValidationError):
        select_k(leaf, cls(group[:10]), [2])
    with pytest.raises(ValidationError):
        select_k(leaf, cls(group), [60])
