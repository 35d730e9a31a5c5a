import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import jensenshannon
from scipy.stats import wasserstein_distance

from pathcluster.dataset import Dataset, FeatureColumn, Partition
from pathcluster.errors import ValidationError
from pathcluster.importance import (
    EmpiricalDistribution,
    bin_numeric,
    default_metric,
    freedman_diaconis_count,
    importance_from_dict,
    jensen_shannon_distance,
    local_importance,
    wasserstein_1d,
    write_importance_csv,
)

S = EmpiricalDistribution.from_samples
M = EmpiricalDistribution.from_counts

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
samples = st.lists(finite, min_size=1, max_size=30)
masses = st.lists(st.integers(0, 20), min_size=4, max_size=4).filter(lambda c: sum(c) > 0)


def test_wasserstein_examples():
    assert wasserstein_1d(S([1, 2, 3]), S([1, 2, 3])) == 0.0
    assert wasserstein_1d(S([0]), S([1])) == 1.0
    assert wasserstein_1d(S([1, 2, 3, 4]), S([2, 3, 4, 5])) == 1.0


def test_js_examples():
    assert jensen_shannon_distance(M([1, 1]), M([1, 1])) == 0.0
    assert jensen_shannon_distance(M([1, 0]), M([0, 1])) == 1.0
    p, q = np.array([0.5, 0.5]), np.array([0.9, 0.1])
    m = (p + q) / 2
    by_hand = np.sqrt(0.5 * np.sum(p * np.log2(p / m)) + 0.5 * np.sum(q * np.log2(q / m)))
    assert jensen_shannon_distance(M(p), M(q)) == pytest.approx(by_hand, abs=1e-15)
    with pytest.raises(ValidationError):
        jensen_shannon_distance(M([1, 1]), M([1, 1, 1]))


@settings(max_examples=200, deadline=None)
@given(samples, samples)
def test_wasserstein_matches_scipy(a, b):
    assert wasserstein_1d(S(a), S(b)) == pytest.approx(wasserstein_distance(a, b), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(masses, masses)
def test_js_matches_scipy(p, q):
    expected = jensenshannon(np.array(p, float) / sum(p), np.array(q, float) / sum(q), base=2)
    assert jensen_shannon_distance(M(p), M(q)) == pytest.approx(expected, abs=1e-7)


@settings(max_examples=150, deadline=None)
@given(samples, samples, finite)
def test_wasserstein_properties(a, b, c):
    d = wasserstein_1d(S(a), S(b))
    assert d == wasserstein_1d(S(b), S(a))
    assert wasserstein_1d(S(a), S(list(a))) == 0.0
    shifted = wasserstein_1d(S(np.add(a, c)), S(np.add(b, c)))
    assert shifted == pytest.approx(d, rel=1e-9, abs=1e-6)


def test_binning_uniform():
    v = np.random.default_rng(0).random(1000)
    q75, q25 = np.percentile(v, [75, 25])
    expected = int(np.ceil((v.max() - v.min()) / (2 * (q75 - q25) * 1000 ** (-1 / 3))))
    assert freedman_diaconis_count(v) == expected
    assert 9 <= expected <= 11
    spec = bin_numeric(v)
    assert spec.bin_count == expected
    assert spec.counts(v).sum() == 1000


def test_binning_heavy_tail_is_balanced():
    v = np.random.default_rng(1).lognormal(sigma=1.5, size=2000)
    counts = bin_numeric(v).counts(v)
    mean = counts.mean()
    assert counts.min() >= 0.5 * mean and counts.max() <= 2 * mean


def test_binning_edge_cases():
    assert bin_numeric(np.full(10, 3.0)).constant
    assert bin_numeric(np.full(10, 3.0)).bin_count == 1
    # IQR of zero falls back to Sturges, then tied quantiles merge
    v = np.array([0.0] * 50 + [1.0, 2.0])
    assert freedman_diaconis_count(v) == int(np.ceil(np.log2(52))) + 1
    assert 1 <= bin_numeric(v).bin_count <= 7
    with pytest.raises(ValidationError):
        bin_numeric(v, bounds=(3, 2))


def _ds(**cols):
    out = []
    for name, values in cols.items():
        if isinstance(values, tuple):
            out.append(FeatureColumn(name, "categorical", np.asarray(values[0]), values[1]))
        else:
            out.append(FeatureColumn(name, "numeric", np.asarray(values, dtype=float)))
    return Dataset(tuple(out))


def test_binary_indicator_distance():
    labels = np.array([0] * 10 + [1] * 10)
    flag = np.array([1] * 10 + [0] * 10)
    ds = _ds(f=(flag, ("0", "1")), g=np.arange(20.0))
    report = local_importance(ds, Partition(labels), "wasserstein")
    assert report.raw_local[0, 0] == 0.5


def test_noise_feature_scores_low(rng):
    labels = np.repeat([0, 1, 2], 200)
    signal = np.concatenate([rng.normal(m, 1, 200) for m in (0, 4, 8)])
    # same multiset of values in every cluster: no shift at all
    same = np.tile(rng.normal(size=200), 3)
    ds = _ds(signal=signal, same=same, noise=rng.normal(size=600))
    for metric in ("wasserstein", "jensen_shannon"):
        report = local_importance(ds, Partition(labels), metric)
        assert report.global_score("same") == 0.0
        assert report.ranking()[0] == "signal"
    report = local_importance(ds, Partition(labels), "wasserstein")
    assert report.global_score("noise") < 0.1 * report.global_score("signal")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["wasserstein", "jensen_shannon"]))
def test_normalization_contract(seed, metric):
    rng = np.random.default_rng(seed)
    n = 60
    labels = np.sort(rng.integers(0, 3, size=n))
    labels[:3] = [0, 1, 2]
    ds = _ds(a=rng.normal(size=n), b=rng.normal(size=n) + labels, c=(rng.integers(0, 3, n), ("x", "y", "z")))
    r = local_importance(ds, Partition.from_labels(labels), metric)
    for i in range(r.k):
        if r.raw_local[i].max() > 0:
            assert r.local[i].max() == 1.0
            assert np.argmax(r.local[i]) == np.argmax(r.raw_local[i])
    np.testing.assert_allclose(r.global_, r.local.mean(axis=0))
    assert np.all((r.global_ >= 0) & (r.global_ <= 1))


def test_all_zero_cluster_is_flagged():
    ds = _ds(a=[1.0, 2.0, 1.0, 2.0])
    r = local_importance(ds, Partition(np.array([0, 0, 1, 1])), "wasserstein")
    assert not r.local.any()
    assert any("matches the background" in f for f in r.flags)


def test_singleton_and_constant_flags():
    ds = _ds(a=[1.0, 1.0, 1.0, 1.0], b=[0.0, 1.0, 2.0, 3.0])
    r = local_importance(ds, Partition(np.array([0, 0, 0, 1])), "jensen_shannon")
    assert any("low-confidence" in f for f in r.flags)
    assert any("constant" in f for f in r.flags)


def test_default_metric_and_serialization(tmp_path, rng):
    ds = _ds(a=rng.normal(size=20), b=rng.normal(size=20), c=(rng.integers(0, 2, 20), ("p", "q")))
    assert default_metric(ds) == "wasserstein"
    assert default_metric(_ds(a=rng.normal(size=4), c=(np.array([0, 1, 0, 1]), ("p", "q")))) == "jensen_shannon"
    r = local_importance(ds, Partition(np.arange(20) % 2))
    back = importance_from_dict(json.loads(json.dumps(r.to_dict())))
    np.testing.assert_array_equal(back.local, r.local)
    assert back.ranking() == r.ranking()
    write_importance_csv(r, tmp_path / "i.csv")
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "cluster,feature,raw,normalized" and lines[1].startswith("1,a,")
    assert len(lines) == 1 + 2 * 3
