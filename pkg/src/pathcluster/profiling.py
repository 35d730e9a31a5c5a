"""Wall time and peak memory of distance construction and clustering.

Every measurement runs in a fresh interpreter so that its peak resident set
(``VmHWM`` on Linux) reflects that case alone. Leaf matrices are synthetic: each
sample belongs to one of a few latent groups and lands in its group's leaf
with high probability, so the clustering has real structure to find.
"""

from __future__ import annotations

import json
import resource
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

DENSE_MATRIX = "dense_matrix"
MEMMAP_MATRIX = "memmap_matrix"
PAM_NAIVE = "pam_naive"
PAM_FAST = "pam_fast"
CLARA = "clara"
DENSE_PIPELINE = "dense_pipeline"
MEMMAP_PIPELINE = "memmap_pipeline"
MODES = (DENSE_MATRIX, MEMMAP_MATRIX, PAM_NAIVE, PAM_FAST, CLARA, DENSE_PIPELINE, MEMMAP_PIPELINE)
_NEEDS_DISK = (MEMMAP_MATRIX, MEMMAP_PIPELINE)

CSV_HEADER = "n,mode,wall_seconds,peak_rss_mb,dense_matrix_mb,note"


def dense_bytes(n):
    """Storage of an ``n x n`` float32 matrix."""
    return 4 * n * n


def synthetic_leaves(n, n_trees=100, seed=0, groups=8, leaves_per_tree=32, purity=0.7):
    from .proximity import LeafMatrix
    from .rng import child_rng

    rng = child_rng(seed, "synthetic-leaves", n)
    group = rng.integers(0, groups, size=n)
    home = rng.integers(0, leaves_per_tree, size=(groups, n_trees))
    stray = rng.integers(0, leaves_per_tree, size=(n, n_trees))
    keep = rng.random((n, n_trees)) < purity
    return LeafMatrix(np.where(keep, home[group], stray))


def _peak_rss_bytes():
    # ru_maxrss survives fork+exec, so a child launched from a large parent
    # would report the parent's peak; VmHWM belongs to this address space only
    try:
        with open("/proc/self/status", encoding="ascii") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def run_case(n, mode, n_trees=100, k=8, seed=0, block_bytes=16 * 2**20, workdir=None):
    """Run one case in the current process; returns wall time and peak RSS."""
    from .kmedoids import ClaraConfig, KMedoidsConfig, clara, pam
    from .proximity import DENSE, HEADER_SIZE, ON_DISK, distance_matrix

    leaf = synthetic_leaves(n, n_trees, seed)
    path = Path(workdir or tempfile.gettempdir()) / f"profile-{n}.bin"
    inner = KMedoidsConfig(k=k, variant="pam_fast", seed=seed)

    def op():
        # returns the bytes holding the distance matrix, when one is built
        if mode == DENSE_MATRIX:
            return distance_matrix(leaf, DENSE, block_bytes=block_bytes).data.nbytes
        if mode == MEMMAP_MATRIX:
            distance_matrix(leaf, ON_DISK, path, block_bytes=block_bytes)
            return path.stat().st_size - HEADER_SIZE
        if mode in (PAM_NAIVE, PAM_FAST):
            pam(matrix, KMedoidsConfig(k=k, variant=mode, seed=seed))
        elif mode == CLARA:
            clara(leaf, ClaraConfig(inner, seed=seed))
        elif mode == DENSE_PIPELINE:
            d = distance_matrix(leaf, DENSE, block_bytes=block_bytes)
            pam(d, inner)
            return d.data.nbytes
        elif mode == MEMMAP_PIPELINE:
            distance_matrix(leaf, ON_DISK, path, block_bytes=block_bytes)
            clara(leaf, ClaraConfig(inner, seed=seed))
            return path.stat().st_size - HEADER_SIZE
        else:
            raise ValidationError(f"unknown profiling mode {mode!r}")
        return None

    matrix = distance_matrix(leaf, DENSE, block_bytes=block_bytes) if mode in (PAM_NAIVE, PAM_FAST) else None
    try:
        start = time.perf_counter()
        matrix_bytes = op()
        wall = time.perf_counter() - start
    finally:
        if path.exists():
            path.unlink()
    return {"n": n, "mode": mode, "wall_seconds": wall, "peak_rss_bytes": _peak_rss_bytes(), "matrix_bytes": matrix_bytes}


def measure(n, mode, n_trees=100, k=8, seed=0, block_bytes=16 * 2**20, workdir=None):
    """Run :func:`run_case` in a fresh interpreter and return its result."""
    args = {"n": n, "mode": mode, "n_trees": n_trees, "k": k, "seed": seed, "block_bytes": block_bytes, "workdir": workdir}
    proc = subprocess.run(
        [sys.executable, "-m", "pathcluster.profiling", json.dumps(args)],
        capture_output=True,
        text=True,
        check=False,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"profiling case {mode} at n={n} failed:\n{proc.stderr}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


@dataclass(frozen=True)
class ProfileRow:
    n: int
    mode: str
    wall_seconds: float | None
    peak_rss_mb: float | None
    note: str = ""

    def csv(self):
        wall = "" if self.wall_seconds is None else f"{self.wall_seconds:.4f}"
        rss = "" if self.peak_rss_mb is None else f"{self.peak_rss_mb:.1f}"
        return f"{self.n},{self.mode},{wall},{rss},{dense_bytes(self.n) / 2**20:.1f},{self.note}"


def profile(sizes, modes=MODES, n_trees=100, k=8, seed=0, block_bytes=16 * 2**20, workdir=None, disk_budget=None):
    """Measure every (size, mode) pair; on-disk cases that would exceed ``disk_budget`` bytes are skipped."""
    sizes = list(sizes)
    if sizes != sorted(sizes) or not sizes:
        raise ValidationError("sizes must be a non-empty ascending list")
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ValidationError(f"unknown profiling modes: {', '.join(unknown)}")
    workdir = workdir or tempfile.gettempdir()
    free = shutil.disk_usage(workdir).free
    budget = free if disk_budget is None else min(free, disk_budget)
    rows = []
    for n in sizes:
        for mode in modes:
            if mode in _NEEDS_DISK and dense_bytes(n) > budget:
                rows.append(ProfileRow(n, mode, None, None, "skipped: exceeds disk budget"))
                continue
            r = measure(n, mode, n_trees, k, seed, block_bytes, workdir)
            rows.append(ProfileRow(n, mode, r["wall_seconds"], r["peak_rss_bytes"] / 2**20))
    return rows


def write_profile_csv(rows, path):
    Path(path).write_text("\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n", encoding="utf-8")


if __name__ == "__main__":
    print(json.dumps(run_case(**json.loads(sys.argv[1]))))
