import json

import pytest

from pathcluster import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Simulated data and a small forest shared by the tests below."""
    d = tmp_path_factory.mktemp("cli")
    assert run("simulate", "--seed", 2, "--out", d) == 0
    assert run("train", "--data", d / "data.csv", "--n-trees", 30, "--max-depth", 3, "--out", d) == 0
    return d


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_simulate_outputs(workdir):
    assert (workdir / "data.schema").read_text().splitlines()[-1] == "label=class"
    assert (workdir / "truth.csv").read_text().startswith("row_index,cluster\n")
    m = manifest(workdir)
    assert m["command"] == "train" and "forest.json" in m["outputs"]


def test_cluster_backends_agree(workdir, tmp_path):
    args = ["cluster", "--data", workdir / "data.csv", "--forest", workdir / "forest.json", "--k", 4]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--backend", "memmap", "--block-mb", 1, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "assignments.csv").read_bytes() == (tmp_path / "b" / "assignments.csv").read_bytes()
    dense, disk = (json.loads((tmp_path / d / "clustering.json").read_text()) for d in "ab")
    assert dense.pop("backend") == "dense" and disk.pop("backend") == "memmap"
    assert dense == disk
    assert (tmp_path / "b" / "distances.bin").stat().st_size == 16 + 4 * 600 * 600


def test_clara_and_naive(workdir, tmp_path):
    base = ["cluster", "--data", workdir / "data.csv", "--forest", workdir / "forest.json", "--k", 3]
    assert run(*base, "--algorithm", "clara", "--clara-size", 100, "--out", tmp_path / "c") == 0
    assert run(*base, "--algorithm", "pam-naive", "--out", tmp_path / "n") == 0
    assert json.loads((tmp_path / "c" / "clustering.json").read_text())["k"] == 3


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "opts.txt"
    cfg.write_text("# defaults\nk = 3\nalgorithm = pam-naive\n")
    args = ["cluster", "--data", workdir / "data.csv", "--forest", workdir / "forest.json", "--config", cfg]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert manifest(tmp_path / "a")["settings"]["k"] == 3
    assert manifest(tmp_path / "a")["settings"]["algorithm"] == "pam-naive"
    assert run(*args, "--k", 5, "--out", tmp_path / "b") == 0
    assert manifest(tmp_path / "b")["settings"]["k"] == 5
    cfg.write_text("bogus = 1\n")
    assert run(*args, "--out", tmp_path / "c") == 2


def test_exit_codes(workdir, tmp_path, capsys):
    assert run("train", "--data", tmp_path / "missing.csv", "--out", tmp_path) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 3
    assert run("cluster", "--data", workdir / "data.csv", "--forest", workdir / "forest.json", "--k", 600, "--out", tmp_path) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("feature_1,label\nx,1\n")
    (tmp_path / "bad.schema").write_text("feature_1=numeric\nlabel=class\n")
    assert run("train", "--data", bad, "--out", tmp_path) == 2
    assert "row 2" in capsys.readouterr().err


def test_pipeline_select_importance_report(workdir, tmp_path):
    out = tmp_path / "p"
    assert run(
        "select-k", "--data", workdir / "data.csv", "--forest", workdir / "forest.json",
        "--k-max", 5, "--bootstrap-iters", 10, "--out", out,
    ) == 0
    ks = json.loads((out / "kselection.json").read_text())
    assert [row["k"] for row in ks["table"]] == [2, 3, 4, 5]
    assert run("importance", "--data", workdir / "data.csv", "--assignments", out / "assignments.csv", "--out", out) == 0
    header = (out / "importance.csv").read_text().splitlines()[0]
    assert header == "cluster,feature,raw,normalized"
    ann = tmp_path / "meta.csv"
    ann.write_text("batch\n" + "\n".join("b%d" % (i % 3) for i in range(600)) + "\n")
    assert run(
        "report", "--data", workdir / "data.csv", "--assignments", out / "assignments.csv",
        "--importance", out / "importance.json", "--annotations", ann,
        "--top-n", 2, "--pin", "feature_5", "--out", out,
    ) == 0
    report = json.loads((out / "report.json").read_text())
    assert "feature_5" in report["features"] and len(report["features"]) == 3
    assert report["annotations"][0]["name"] == "batch"
    assert (out / "report.svg").stat().st_size > 0
    assert (out / "heatmap.csv").read_text().startswith("cluster,")


def test_rerun_reproduces_outputs(workdir, tmp_path):
    out = tmp_path / "r"
    assert run(
        "select-k", "--data", workdir / "data.csv", "--forest", workdir / "forest.json",
        "--k-max", 4, "--bootstrap-iters", 5, "--out", out,
    ) == 0
    first = manifest(out)
    assert run("rerun", out / "manifest.json", "--out", tmp_path / "again", "--threads", 3) == 0
    second = manifest(tmp_path / "again")
    assert second["outputs"] == first["outputs"]
    assert second["threads"] == 3


def test_rerun_rejects_changed_inputs(tmp_path):
    d = tmp_path / "d"
    assert run("simulate", "--seed", 1, "--out", d) == 0
    assert run("train", "--data", d / "data.csv", "--n-trees", 3, "--out", d / "t") == 0
    with open(d / "data.csv", "a") as fh:
        fh.write("\n")
    assert run("rerun", d / "t" / "manifest.json") == 2


def test_matrix_inspect(workdir, tmp_path, capsys):
    out = tmp_path / "m"
    assert run("cluster", "--data", workdir / "data.csv", "--forest", workdir / "forest.json", "--k", 2, "--backend", "memmap", "--out", out) == 0
    capsys.readouterr()
    assert run("matrix", "inspect", out / "distances.bin") == 0
    info = json.loads(capsys.readouterr().out)
    assert info["magic"] == "PCDM" and info["n"] == 600 and len(info["sha256"]) == 64


def test_benchmark_header_golden(tmp_path):
    out = tmp_path / "b"
    assert run("benchmark", "--seed", 0, "--n-trees", 20, "--bootstrap-iters", 3, "--k-max", 4, "--urf-trees", 20, "--out", out) == 0
    lines = (out / "benchmark.csv").read_text().splitlines()
    assert lines[0] == "seed,method,ari,k"
    assert [l.split(",")[1] for l in lines[1:]] == ["fgc", "kmedoids_euclidean", "unsupervised_rf"]
    assert "fgc_seconds" in manifest(out)["timings"]
    assert "seconds" not in (out / "benchmark.json").read_text()


def test_profile_small(tmp_path):
    out = tmp_path / "p"
    assert run("profile", "--sizes", "50,80", "--modes", "dense_matrix,memmap_matrix,clara", "--n-trees", 10, "--k", 3, "--out", out) == 0
    lines = (out / "profile.csv").read_text().splitlines()
    assert lines[0] == "n,mode,wall_seconds,peak_rss_mb,dense_matrix_mb,note"
    assert len(lines) == 1 + 6
    assert run("profile", "--sizes", "80,50", "--out", out) == 2
