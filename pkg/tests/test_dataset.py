import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathcluster.dataset import (
    Dataset,
    FeatureColumn,
    Partition,
    SimulationParams,
    adjusted_rand_index,
    load_csv,
    read_partition,
    simulate_benchmark,
    standardize,
    write_csv,
    write_partition,
)
from pathcluster.errors import ParseError, ValidationError


def write(tmp_path, text, schema):
    path = tmp_path / "t.csv"
    path.write_text(text, encoding="utf-8")
    (tmp_path / "t.schema").write_text(schema, encoding="utf-8")
    return path


def brute_force_ari(a, b):
    """ARI from explicit pair counting over all sample pairs."""
    n = len(a)
    both = only_a = only_b = 0
    for i, j in itertools.combinations(range(n), 2):
        sa, sb = a[i] == a[j], b[i] == b[j]
        both += sa and sb
        only_a += sa and not sb
        only_b += sb and not sa
    total = n * (n - 1) / 2
    pa, pb = both + only_a, both + only_b
    expected = pa * pb / total
    return (both - expected) / (0.5 * (pa + pb) - expected)


# -- CSV ---------------------------------------------------------------------


def test_load_three_rows(tmp_path):
    path = write(tmp_path, "f1,label\n1.5,a\n-2,b\n3e1,a\n", "f1=numeric\nlabel=class\n")
    ds = load_csv(path)
    assert ds.row_count == 3
    assert ds.column("f1").values.tolist() == [1.5, -2.0, 30.0]
    assert ds.target.labels() == ["a", "b", "a"]


def test_text_in_numeric_column_names_the_cell(tmp_path):
    path = write(tmp_path, "f1,label\n1.0,a\noops,b\n", "f1=numeric\nlabel=class\n")
    with pytest.raises(ParseError) as err:
        load_csv(path)
    assert err.value.row == 3 and err.value.column == "f1"
    assert "oops" in str(err.value)


@pytest.mark.parametrize(
    "text, message",
    [
        ("f1,label\n1.0,a\n,b\n", "missing cell"),
        ("f1,label\n1.0,a\n2.0\n", "expected 2 cells"),
        ("f1,other,label\n1,2,a\n", "not declared"),
        ("f1,label\n1,0;5\n1,b\n", None),
    ],
)
def test_malformed_files(tmp_path, text, message):
    path = write(tmp_path, text, "f1=numeric\nlabel=class\n")
    if message is None:
        # a semicolon is just a category label, not a separator
        assert load_csv(path).target.classes == ("0;5", "b")
        return
    with pytest.raises(ParseError, match=message):
        load_csv(path)


def test_decimal_comma_is_rejected(tmp_path):
    path = write(tmp_path, 'f1,label\n"1,5",a\n2,b\n', "f1=numeric\nlabel=class\n")
    with pytest.raises(ParseError):
        load_csv(path)


def test_round_trip(tmp_path, benchmark_data):
    ds, _ = benchmark_data
    write_csv(ds, tmp_path / "d.csv")
    assert load_csv(tmp_path / "d.csv") == ds


def test_partition_round_trip(tmp_path):
    p = Partition(np.array([0, 2, 1, 1, 0]))
    write_partition(p, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[:3] == ["row_index,cluster", "0,1", "1,3"]
    assert read_partition(tmp_path / "p.csv") == p


def test_invariants():
    with pytest.raises(ValidationError):
        Dataset((FeatureColumn("a", "numeric", [1.0]), FeatureColumn("a", "numeric", [2.0])))
    with pytest.raises(ValidationError):
        Dataset((FeatureColumn("a", "numeric", [1.0]), FeatureColumn("b", "numeric", [2.0, 3.0])))
    with pytest.raises(ValidationError):
        FeatureColumn("", "numeric", [1.0])
    with pytest.raises(ValidationError):
        Partition(np.array([0, 2]))


# -- simulation --------------------------------------------------------------


def test_simulation_sizes(benchmark_data):
    ds, truth = benchmark_data
    assert ds.row_count == 600
    assert sorted(np.bincount(truth.labels).tolist()) == [100, 100, 200, 200]
    assert ds.feature_names == [f"feature_{j}" for j in range(1, 6)]
    assert ds.column("feature_5").kind == "categorical"


def test_simulation_is_deterministic(tmp_path):
    a, ta = simulate_benchmark(3)
    b, tb = simulate_benchmark(3)
    write_csv(a, tmp_path / "a.csv")
    write_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert ta == tb
    assert not simulate_benchmark(4)[0] == a


@pytest.mark.parametrize("seed", range(10))
def test_noise_features_unrelated_to_subclasses(seed):
    ds, truth = simulate_benchmark(seed)
    for name in ("feature_4", "feature_5"):
        x = ds.column(name).values.astype(float)
        for g in range(truth.k):
            r = np.corrcoef(x, truth.labels == g)[0, 1]
            assert abs(r) < 0.15, (name, g, r)


def test_simulation_rejects_bad_params():
    with pytest.raises(ValidationError):
        simulate_benchmark(0, SimulationParams(class2_size=0))
    with pytest.raises(ValidationError):
        simulate_benchmark(0, SimulationParams(noise_spread=-1.0))


# -- standardize -------------------------------------------------------------


def test_standardize_hand_values():
    ds = Dataset((FeatureColumn("a", "numeric", [1.0, 2.0, 3.0]), FeatureColumn("c", "numeric", [5.0, 5.0, 5.0])))
    out, stats = standardize(ds)
    z = 1 / np.sqrt(2 / 3)
    np.testing.assert_allclose(out.column("a").values, [-z, 0.0, z], rtol=0, atol=1e-15)
    assert out.column("c").values.tolist() == [0.0, 0.0, 0.0]
    assert stats["c"].constant and not stats["a"].constant


def test_standardize_idempotent_and_categorical_untouched(benchmark_data):
    once, _ = standardize(benchmark_data[0])
    twice, _ = standardize(once)
    for c1, c2 in zip(once.columns, twice.columns):
        np.testing.assert_allclose(c1.values, c2.values, atol=1e-12)
        if c1.is_numeric:
            assert abs(c1.values.mean()) < 1e-10 and abs(c1.values.std() - 1) < 1e-10
    assert once.column("feature_5") == benchmark_data[0].column("feature_5")


# -- ARI ---------------------------------------------------------------------


def test_ari_fixed_values():
    a = [1, 1, 2, 2]
    b = [1, 2, 2, 2]
    assert adjusted_rand_index(a, b) == pytest.approx(brute_force_ari(a, b), abs=1e-15)
    assert adjusted_rand_index(a, b) == 0.0
    assert adjusted_rand_index(a, a) == 1.0
    assert adjusted_rand_index(np.arange(6), np.zeros(6)) == 0.0


def test_ari_length_mismatch():
    with pytest.raises(ValidationError):
        adjusted_rand_index([0, 1], [0, 1, 1])


labels = st.lists(st.integers(0, 4), min_size=3, max_size=40)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_ari_matches_pair_counting_and_sklearn(data):
    from sklearn.metrics import adjusted_rand_score

    a = data.draw(labels)
    b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
    ours = adjusted_rand_index(a, b)
    assert ours == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
    if len(set(a)) not in (1, len(a)) or len(set(b)) not in (1, len(b)):
        assert ours == pytest.approx(brute_force_ari(a, b), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(labels, st.permutations(range(5)))
def test_ari_symmetric_and_relabel_invariant(a, perm):
    rng = np.random.default_rng(len(a))
    b = rng.integers(0, 3, size=len(a))
    relabelled = [perm[v] for v in a]
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a), abs=1e-12)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(relabelled, b), abs=1e-12)
