"""Command-line interface.

Every command writes its outputs under ``--out`` with fixed file names plus a
``manifest.json`` recording the seed, version, resolved settings and input
digests; ``pathcluster rerun manifest.json`` repeats the run from it.

Exit codes: 0 success, 2 invalid input, 3 I/O failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import InvariantError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

DATA_CSV = "data.csv"
TRUTH_CSV = "truth.csv"
FOREST_JSON = "forest.json"
ASSIGNMENTS_CSV = "assignments.csv"
CLUSTERING_JSON = "clustering.json"
DISTANCES_BIN = "distances.bin"
KSELECTION_JSON = "kselection.json"
IMPORTANCE_CSV = "importance.csv"
IMPORTANCE_JSON = "importance.json"
REPORT_SVG = "report.svg"
REPORT_JSON = "report.json"
HEATMAP_CSV = "heatmap.csv"
BENCHMARK_JSON = "benchmark.json"
BENCHMARK_CSV = "benchmark.csv"
PROFILE_CSV = "profile.csv"
MANIFEST_JSON = "manifest.json"

# options that never change results and so are not part of a run's settings
_RUNTIME_KEYS = {"command", "config", "out", "threads", "func", "matrix_command"}


def sha256_file(path, chunk=2**20):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(chunk)
            if not buf:
                break
            digest.update(buf)
    return digest.hexdigest()


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


class Run:
    """Collects inputs and outputs of one command for its manifest."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = []
        self.timings = {}

    def input(self, role, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(2, "input file not found", str(path))
        self.inputs[role] = {"path": str(path.resolve()), "sha256": sha256_file(path)}
        return path

    def output(self, name):
        self.outputs.append(name)
        return self.out / name


# ---------------------------------------------------------------------------
# loading helpers
# ---------------------------------------------------------------------------


def _load_data(run, path):
    from .dataset import load_csv, schema_path_for

    path = run.input("data", path)
    if schema_path_for(path).is_file():
        run.input("schema", schema_path_for(path))
    return load_csv(path)


def _load_forest(run, path):
    from .forest import load_forest

    return load_forest(run.input("forest", path).read_bytes())


def _load_partition(run, path, n):
    from .dataset import read_partition

    partition = read_partition(run.input("assignments", path))
    if len(partition) != n:
        raise ValidationError(f"assignments cover {len(partition)} rows, dataset has {n}")
    return partition


def _leaves(run, args):
    from .forest import apply

    dataset = _load_data(run, args.data)
    model = _load_forest(run, args.forest)
    return dataset, apply(model, dataset, threads=args.threads)


def _write_clustering(run, result, extra):
    from .dataset import write_partition

    write_partition(result.assignments, run.output(ASSIGNMENTS_CSV))
    _dump_json({**extra, **result.to_dict(), "cluster_sizes": result.cluster_sizes().tolist()}, run.output(CLUSTERING_JSON))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(run, args):
    from .dataset import simulate_benchmark, write_csv, write_partition

    dataset, truth = simulate_benchmark(args.seed)
    write_csv(dataset, run.output(DATA_CSV))
    run.outputs.append(Path(DATA_CSV).with_suffix(".schema").name)
    write_partition(truth, run.output(TRUTH_CSV))


def _max_features(text):
    text = str(text)
    return int(text) if text.isdigit() else text


def cmd_train(run, args):
    from .forest import TrainConfig, save_forest, train

    dataset = _load_data(run, args.data)
    config = TrainConfig(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        max_features=_max_features(args.max_features),
        bootstrap_fraction=args.bootstrap_fraction,
        min_samples_leaf=args.min_samples_leaf,
        seed=args.seed,
    )
    model = train(dataset, config, threads=args.threads)
    run.output(FOREST_JSON).write_bytes(save_forest(model))


def _method(args):
    from .model_selection import ClusterMethod

    algorithm = "clara" if args.algorithm == "clara" else "pam"
    variant = "pam_naive" if args.algorithm == "pam-naive" else "pam_fast"
    return ClusterMethod(
        algorithm=algorithm,
        variant=variant,
        init=args.init,
        max_iter=args.max_iter,
        clara_T=args.clara_t,
        clara_subsample=args.clara_size,
        seed=args.seed,
    )


def cmd_cluster(run, args):
    from .proximity import DENSE, distance_matrix

    _, leaf = _leaves(run, args)
    method = _method(args)
    distances = None
    if method.algorithm == "pam":
        path = run.output(DISTANCES_BIN) if args.backend != DENSE else None
        distances = distance_matrix(leaf, args.backend, path, block_bytes=args.block_mb * 2**20, threads=args.threads)
    result = method.run(leaf, args.k, distances=distances)
    _write_clustering(run, result, {"algorithm": args.algorithm, "backend": args.backend})


def cmd_select_k(run, args):
    from .model_selection import SelectionConfig, select_k

    dataset, leaf = _leaves(run, args)
    if dataset.target is None:
        raise ValidationError("select-k needs a dataset with a target column")
    config = SelectionConfig(
        method=_method(args),
        iters=args.bootstrap_iters,
        fraction=args.bootstrap_fraction,
        with_replacement=args.with_replacement,
        seed=args.seed,
    )
    report = select_k(leaf, dataset.target, range(args.k_min, args.k_max + 1), args.stability_threshold, config, threads=args.threads)
    _dump_json(report.to_dict(), run.output(KSELECTION_JSON))
    if report.chosen_k is None:
        print(f"warning: {report.diagnostic}", file=sys.stderr)
        return
    _write_clustering(run, report.chosen.clustering, {"algorithm": args.algorithm, "chosen_by": "select-k"})


def cmd_importance(run, args):
    from .importance import local_importance, write_importance_csv

    dataset = _load_data(run, args.data)
    partition = _load_partition(run, args.assignments, dataset.row_count)
    report = local_importance(dataset, partition, args.metric)
    write_importance_csv(report, run.output(IMPORTANCE_CSV))
    _dump_json(report.to_dict(), run.output(IMPORTANCE_JSON))


def _read_annotations(run, path, n):
    import csv

    with open(run.input("annotations", path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError("annotation file is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(body) != n:
        raise ValidationError(f"annotation file has {len(body)} rows, dataset has {n}")
    for i, r in enumerate(body, 2):
        if len(r) != len(header):
            raise ValidationError(f"annotation row {i} has {len(r)} fields, expected {len(header)}")
    return {name: [r[j] for r in body] for j, name in enumerate(header)}


def cmd_report(run, args):
    from .importance import importance_from_dict, local_importance
    from .report import build_report, render_svg

    dataset = _load_data(run, args.data)
    partition = _load_partition(run, args.assignments, dataset.row_count)
    if args.importance:
        raw = json.loads(run.input("importance", args.importance).read_text(encoding="utf-8"))
        importance = importance_from_dict(raw)
    else:
        importance = local_importance(dataset, partition, args.metric)
    annotations = _read_annotations(run, args.annotations, dataset.row_count) if args.annotations else None
    pinned = tuple(p for group in (args.pin or []) for p in str(group).split(",") if p)
    report = build_report(dataset, partition, importance, annotations, top_n=args.top_n, pinned=pinned)
    run.output(REPORT_JSON).write_text(report.to_json(), encoding="utf-8")
    run.output(HEATMAP_CSV).write_text(report.heatmap_csv(), encoding="utf-8")
    render_svg(report, run.output(REPORT_SVG))


def cmd_benchmark(run, args):
    from .benchmark import CSV_HEADER, BenchmarkConfig, run_benchmark

    config = BenchmarkConfig(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        k_min=args.k_min,
        k_max=args.k_max,
        threshold=args.stability_threshold,
        bootstrap_iters=args.bootstrap_iters,
        urf_trees=args.urf_trees,
    )
    result = run_benchmark(args.seed, config, threads=args.threads)
    run.output(BENCHMARK_JSON).write_text(result.to_json(), encoding="utf-8")
    run.output(BENCHMARK_CSV).write_text("\n".join([CSV_HEADER] + result.csv_rows()) + "\n", encoding="utf-8")
    run.timings.update({f"{m}_seconds": t for m, t in result.wall_time.items()})


def cmd_profile(run, args):
    from .profiling import profile, write_profile_csv

    sizes = [int(s) for s in str(args.sizes).split(",") if s]
    modes = [m for m in str(args.modes).split(",") if m]
    rows = profile(
        sizes,
        modes,
        n_trees=args.n_trees,
        k=args.k,
        seed=args.seed,
        block_bytes=args.block_mb * 2**20,
        workdir=str(run.out),
        disk_budget=None if args.disk_budget_mb is None else args.disk_budget_mb * 2**20,
    )
    write_profile_csv(rows, run.output(PROFILE_CSV))


def cmd_matrix_inspect(args):
    from .proximity import inspect_matrix

    print(json.dumps(inspect_matrix(args.path), indent=2))


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "select-k": cmd_select_k,
    "importance": cmd_importance,
    "report": cmd_report,
    "benchmark": cmd_benchmark,
    "profile": cmd_profile,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _optional_int(text):
    return None if str(text).lower() in ("", "none") else int(text)


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    p.add_argument("--config", help="key=value file of option defaults; flags override it")
    p.add_argument("--out", default=".", help="output directory")
    return p


def _clustering_options(p):
    p.add_argument("--algorithm", choices=["pam", "pam-naive", "clara"], default="pam")
    p.add_argument("--init", choices=["greedy", "random"], default="greedy")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--clara-t", type=int, default=5, help="CLARA iterations")
    p.add_argument("--clara-size", type=_optional_int, default=None, help="CLARA subsample size (default 40 + 2k^2)")


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="pathcluster", description="Explain random forests by clustering decision paths.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="write the simulated benchmark table")

    p = sub.add_parser("train", parents=[common], help="train a forest")
    p.add_argument("--data", required=True)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=_optional_int, default=None)
    p.add_argument("--max-features", default="sqrt", help="sqrt, log2, all or a count")
    p.add_argument("--bootstrap-fraction", type=float, default=1.0)
    p.add_argument("--min-samples-leaf", type=int, default=1)

    p = sub.add_parser("cluster", parents=[common], help="k-medoids on forest distances")
    p.add_argument("--data", required=True)
    p.add_argument("--forest", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--backend", choices=["dense", "memmap"], default="dense")
    p.add_argument("--block-mb", type=int, default=256, help="RAM budget per row block")
    _clustering_options(p)

    p = sub.add_parser("select-k", parents=[common], help="choose k by bias and stability")
    p.add_argument("--data", required=True)
    p.add_argument("--forest", required=True)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--stability-threshold", type=float, default=0.6)
    p.add_argument("--bootstrap-iters", type=int, default=100)
    p.add_argument("--bootstrap-fraction", type=float, default=0.8)
    p.add_argument("--with-replacement", action="store_true")
    _clustering_options(p)

    p = sub.add_parser("importance", parents=[common], help="per-cluster and global feature importance")
    p.add_argument("--data", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--metric", choices=["wasserstein", "jensen_shannon"], default=None)

    p = sub.add_parser("report", parents=[common], help="decision-path report (SVG, JSON, CSV)")
    p.add_argument("--data", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--importance", help="importance.json; recomputed when absent")
    p.add_argument("--metric", choices=["wasserstein", "jensen_shannon"], default=None)
    p.add_argument("--annotations", help="CSV of per-row metadata columns")
    p.add_argument("--top-n", type=_optional_int, default=None)
    p.add_argument("--pin", action="append", help="feature(s) always shown; repeatable or comma-separated")

    p = sub.add_parser("benchmark", parents=[common], help="forest-path clustering against Euclidean and unsupervised-forest clustering")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=_optional_int, default=3)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--stability-threshold", type=float, default=0.6)
    p.add_argument("--bootstrap-iters", type=int, default=100)
    p.add_argument("--urf-trees", type=int, default=2000)

    p = sub.add_parser("profile", parents=[common], help="runtime and peak memory by sample count")
    p.add_argument("--sizes", default="1000,2000,5000")
    p.add_argument("--modes", default="dense_matrix,memmap_matrix,pam_naive,pam_fast,clara")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--block-mb", type=int, default=16)
    p.add_argument("--disk-budget-mb", type=_optional_int, default=None)

    p = sub.add_parser("matrix", help="inspect on-disk distance matrices")
    msub = p.add_subparsers(dest="matrix_command", required=True)
    m = msub.add_parser("inspect", help="print header and checksum")
    m.add_argument("path")

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: the recorded one)")
    p.add_argument("--threads", type=int, default=None)
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def read_config(path):
    """Parse a ``key=value`` file; blank lines and ``#`` comments are skipped."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(sub, values):
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "out"):
            raise ValidationError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValidationError(f"config key {key!r} expects true or false")
            defaults[key] = value.lower() in ("true", "1", "yes")
        elif isinstance(action, argparse._AppendAction):
            defaults[key] = [value]
        else:
            converted = action.type(value) if action.type else value
            if action.choices is not None and converted not in action.choices:
                raise ValidationError(f"config key {key!r}: {value!r} is not one of {list(action.choices)}")
            defaults[key] = converted
        action.required = False
    sub.set_defaults(**defaults)


def _config_option(argv):
    """``(command, config path)`` found in raw argv, before argparse runs."""
    command = next((a for a in argv if not a.startswith("-")), None)
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return command, argv[i + 1]
        if a.startswith("--config="):
            return command, a.split("=", 1)[1]
    return command, None


def parse_args(argv):
    # config values become subcommand defaults before parsing, so they can
    # also satisfy required options; explicit flags still win
    parser = build_parser()
    command, config = _config_option(argv)
    if config and command in COMMANDS:
        _apply_config(_subparser(parser, command), read_config(config))
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# running and manifests
# ---------------------------------------------------------------------------


def _settings(args):
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in _RUNTIME_KEYS:
            continue
        if key in ("data", "forest", "assignments", "importance", "annotations") and value:
            value = str(Path(value).resolve())
        out[key] = value
    return out


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def execute(args, argv):
    run = Run(args)
    started = _now()
    t0 = time.perf_counter()
    COMMANDS[args.command](run, args)
    run.timings["total_seconds"] = time.perf_counter() - t0
    manifest = {
        "tool": "pathcluster",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "seed": args.seed,
        "threads": args.threads,
        "out": str(run.out.resolve()),
        "settings": _settings(args),
        "inputs": run.inputs,
        "outputs": {name: sha256_file(run.out / name) for name in run.outputs},
        "timings": run.timings,
        "started": started,
        "finished": _now(),
    }
    _dump_json(manifest, run.out / MANIFEST_JSON)
    return manifest


def rerun(manifest_path, out=None, threads=None):
    """Repeat the run recorded in ``manifest_path``; inputs must be unchanged."""
    raw = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    for key in ("command", "settings", "inputs", "seed"):
        if key not in raw:
            raise ValidationError(f"manifest lacks {key!r}")
    if raw["command"] not in COMMANDS:
        raise ValidationError(f"manifest names unknown command {raw['command']!r}")
    for role, entry in raw["inputs"].items():
        if sha256_file(entry["path"]) != entry["sha256"]:
            raise ValidationError(f"input {role} ({entry['path']}) changed since the recorded run")
    args = argparse.Namespace(**raw["settings"])
    args.command = raw["command"]
    args.seed = raw["seed"]
    args.config = None
    args.out = out or raw["out"]
    args.threads = raw.get("threads", 1) if threads is None else threads
    argv = ["rerun", str(manifest_path)]
    return execute(args, argv)


def _fail(code, exc):
    message = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(message), file=sys.stderr)
    return code


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        if args.command == "matrix":
            cmd_matrix_inspect(args)
        elif args.command == "rerun":
            rerun(args.manifest, args.out, args.threads)
        else:
            if args.threads < 1:
                raise ValidationError("--threads must be >= 1")
            execute(args, argv)
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except InvariantError as exc:
        return _fail(EXIT_INTERNAL, exc)
    except Exception as exc:  # noqa: BLE001 - anything else is a bug
        return _fail(EXIT_INTERNAL, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
