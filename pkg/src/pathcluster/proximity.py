"""Forest proximities and the derived distance matrix.

The distance between samples ``i`` and ``j`` is ``(N - m_ij) / N`` where
``m_ij`` counts the trees in which both land in the same leaf. Counts are
accumulated exactly and divided once, then stored as float32, so every
backend and every sub-block computation yields bitwise identical entries.

On-disk layout (little-endian): 16-byte header ``b"PCDM"``, uint32 version,
uint64 n; then ``n * n`` row-major float32 values.
"""

from __future__ import annotations

import errno
import fcntl
import hashlib
import os
import shutil
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"PCDM"
VERSION = 1
HEADER = struct.Struct("<4sIQ")
HEADER_SIZE = HEADER.size  # 16
DEFAULT_BLOCK_BYTES = 256 * 2**20

DENSE = "dense"
ON_DISK = "memmap"

# leaves-per-tree above which per-tree equality beats the one-hot matmul
_ONEHOT_MAX_LEAVES = 64
_ONEHOT_CHUNK_BYTES = 8 * 2**20


@dataclass(frozen=True, eq=False)
class LeafMatrix:
    """Terminal-node ids, shape ``(n_samples, n_trees)``."""

    leaf_ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.leaf_ids)
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise ValidationError("leaf ids must be a (samples, trees) table with at least one tree")
        if not np.issubdtype(ids.dtype, np.integer):
            raise ValidationError("leaf ids must be integers")
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "leaf_ids", ids)

    @property
    def n(self):
        return self.leaf_ids.shape[0]

    @property
    def n_trees(self):
        return self.leaf_ids.shape[1]

    def take(self, rows):
        return LeafMatrix(self.leaf_ids[np.asarray(rows)])

    def codes(self):
        """Per-tree leaf ids recoded to ``0..L_t-1``; returns (codes, leaves per tree)."""
        codes = np.empty_like(self.leaf_ids)
        sizes = np.empty(self.n_trees, dtype=np.int64)
        for t in range(self.n_trees):
            _, inv = np.unique(self.leaf_ids[:, t], return_inverse=True)
            codes[:, t] = inv.ravel()
            sizes[t] = inv.max() + 1 if inv.size else 0
        return codes, sizes


def _check_index(i, n, what="index"):
    if not 0 <= i < n:
        raise ValidationError(f"{what} {i} out of range for {n} samples")


def proximity(leaf, i, j):
    """Fraction of trees in which samples ``i`` and ``j`` share a leaf."""
    _check_index(i, leaf.n)
    _check_index(j, leaf.n)
    m = int(np.count_nonzero(leaf.leaf_ids[i] == leaf.leaf_ids[j]))
    return m / leaf.n_trees


def counts_to_distance(counts, n_trees):
    """Exact co-occurrence counts -> float32 distances."""
    counts = np.asarray(counts, dtype=np.float64)
    return ((n_trees - counts) / n_trees).astype(np.float32)


class _Cooccurrence:
    """Computes ``m_ij`` for arbitrary row/column index sets of one LeafMatrix."""

    def __init__(self, leaf):
        self.leaf = leaf
        self.codes, self.sizes = leaf.codes()
        self.onehot = float(self.sizes.mean()) <= _ONEHOT_MAX_LEAVES
        if self.onehot:
            offsets = np.concatenate([[0], np.cumsum(self.sizes)])
            self.offsets = offsets
            n = leaf.n
            per_tree = max(1, int(_ONEHOT_CHUNK_BYTES // max(1, 4 * n * max(1, self.sizes.max()))))
            self.tree_chunks = [
                np.arange(s, min(s + per_tree, leaf.n_trees)) for s in range(0, leaf.n_trees, per_tree)
            ]

    def _onehot(self, idx, trees):
        width = int(self.offsets[trees[-1] + 1] - self.offsets[trees[0]])
        out = np.zeros((len(idx), width), dtype=np.float32)
        base = self.offsets[trees[0]]
        cols = self.codes[np.ix_(idx, trees)] + (self.offsets[trees] - base)
        out[np.arange(len(idx))[:, None], cols] = 1.0
        return out

    def block(self, rows, cols):
        """Integer-valued float64 array of shared-leaf counts, ``len(rows) x len(cols)``."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        if self.onehot:
            acc = np.zeros((len(rows), len(cols)), dtype=np.float32)
            for trees in self.tree_chunks:
                acc += self._onehot(rows, trees) @ self._onehot(cols, trees).T
            return acc.astype(np.float64)
        acc = np.zeros((len(rows), len(cols)), dtype=np.int32)
        r = self.codes[rows]
        c = self.codes[cols]
        for t in range(self.leaf.n_trees):
            acc += r[:, t, None] == c[None, :, t]
        return acc.astype(np.float64)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric float32 forest distances, in memory or memory-mapped from disk."""

    data: np.ndarray
    backend: str
    path: Path | None = None

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def nbytes(self):
        return 4 * self.n * self.n

    def submatrix(self, idx):
        idx = np.asarray(idx)
        return np.asarray(self.data[np.ix_(idx, idx)])

    def columns(self, idx):
        return np.asarray(self.data[:, np.asarray(idx)])

    def to_array(self):
        return np.asarray(self.data)

    @classmethod
    def from_array(cls, array):
        """Wrap a precomputed square float matrix, validating the distance invariants."""
        a = np.ascontiguousarray(array, dtype=np.float32)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError("distance matrix must be square")
        if not np.all(np.isfinite(a)):
            raise ValidationError("distance matrix has non-finite entries")
        if np.any(np.diag(a) != 0) or not np.array_equal(a, a.T):
            raise ValidationError("distance matrix must be symmetric with a zero diagonal")
        return cls(a, DENSE)


def _row_blocks(n, block_bytes):
    # counts + distances + temporaries: ~16 bytes per entry
    rows = max(1, int(block_bytes // max(1, 16 * n)))
    return [np.arange(s, min(s + rows, n)) for s in range(0, n, rows)]


def _compute_blocks(leaf, block_bytes, threads):
    """Yield ``(rows, float32 block)`` in row order."""
    co = _Cooccurrence(leaf)
    everything = np.arange(leaf.n)
    blocks = _row_blocks(leaf.n, block_bytes)

    def one(rows):
        d = counts_to_distance(co.block(rows, everything), leaf.n_trees)
        d[np.arange(len(rows)), rows] = 0.0
        return d

    if threads <= 1:
        for rows in blocks:
            yield rows, one(rows)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for s in range(0, len(blocks), threads):
            group = blocks[s : s + threads]
            for rows, d in zip(group, pool.map(one, group)):
                yield rows, d


def distance_matrix(leaf, backend=DENSE, path=None, block_bytes=DEFAULT_BLOCK_BYTES, threads=1):
    """Full ``n x n`` distance matrix.

    Parameters
    ----------
    leaf : LeafMatrix
    backend : {"dense", "memmap"}
        ``memmap`` writes blocks sequentially to ``path`` and returns a
        read-only memory map; the file appears only once complete.
    block_bytes : int
        Approximate RAM budget for one row block.
    threads : int
        Workers over disjoint row blocks; does not change the output.
    """
    n = leaf.n
    if n < 2:
        raise ValidationError("a distance matrix needs at least two samples")
    if backend == DENSE:
        out = np.empty((n, n), dtype=np.float32)
        for rows, d in _compute_blocks(leaf, block_bytes, threads):
            out[rows[0] : rows[-1] + 1] = d
        out.setflags(write=False)
        return DistanceMatrix(out, DENSE)
    if backend != ON_DISK:
        raise ValidationError(f"unknown backend {backend!r}")
    if path is None:
        raise ValidationError("the memmap backend needs a file path")
    path = Path(path)
    write_matrix(path, n, _compute_blocks(leaf, block_bytes, threads))
    return open_matrix(path)


def write_matrix(path, n, blocks):
    """Stream ``(rows, block)`` pairs into the on-disk format.

    Writes go to ``<path>.partial`` under an exclusive advisory lock and are
    renamed into place only after every block has been written.
    """
    path = Path(path)
    need = HEADER_SIZE + 4 * n * n
    parent = path.resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(errno.ENOENT, "directory does not exist", str(parent))
    free = shutil.disk_usage(parent).free
    if free < need:
        raise OSError(errno.ENOSPC, f"need {need} bytes, {free} free", str(parent))
    partial = path.with_name(path.name + ".partial")
    try:
        with open(partial, "wb") as fh:
            try:
                fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise OSError(errno.EBUSY, "matrix file is locked by another writer", str(partial)) from None
            fh.write(HEADER.pack(MAGIC, VERSION, n))
            written = 0
            for rows, block in blocks:
                if rows[0] != written:
                    raise ValueError("row blocks must arrive in order")
                fh.write(np.ascontiguousarray(block, dtype="<f4").data)
                written = rows[-1] + 1
            if written != n:
                raise ValueError(f"only {written} of {n} rows written")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(partial, path)
    except BaseException:
        if partial.exists():
            partial.unlink()
        raise


def read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) != HEADER_SIZE:
        raise ValidationError(f"{path}: truncated header")
    magic, version, n = HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValidationError(f"{path}: not a distance matrix file")
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    size = os.path.getsize(path)
    if size != HEADER_SIZE + 4 * n * n:
        raise ValidationError(f"{path}: expected {HEADER_SIZE + 4 * n * n} bytes, found {size}")
    return {"magic": magic.decode("ascii"), "version": version, "n": n}


def open_matrix(path):
    """Memory-map an on-disk matrix read-only."""
    header = read_header(path)
    n = header["n"]
    data = np.memmap(path, dtype="<f4", mode="r", offset=HEADER_SIZE, shape=(n, n))
    return DistanceMatrix(data, ON_DISK, Path(path))


def inspect_matrix(path, chunk=2**24):
    """Header fields plus a SHA-256 of the whole file."""
    header = read_header(path)
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(chunk)
            if not buf:
                break
            digest.update(buf)
    header["sha256"] = digest.hexdigest()
    header["bytes"] = os.path.getsize(path)
    return header


def distance_to_points(leaf, targets, block_bytes=DEFAULT_BLOCK_BYTES, sources=None):
    """Distances from every sample (or ``sources``) to each target.

    Returns a float32 array ``(n_sources, len(targets))`` without forming the
    full matrix.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1 or targets.size == 0:
        raise ValidationError("targets must be a non-empty index list")
    for t in targets:
        _check_index(int(t), leaf.n, "target")
    sources = np.arange(leaf.n) if sources is None else np.asarray(sources, dtype=np.int64)
    co = _Cooccurrence(leaf)
    out = np.empty((len(sources), len(targets)), dtype=np.float32)
    step = max(1, int(block_bytes // max(1, 16 * len(targets))))
    for s in range(0, len(sources), step):
        rows = sources[s : s + step]
        d = counts_to_distance(co.block(rows, targets), leaf.n_trees)
        d[rows[:, None] == targets[None, :]] = 0.0
        out[s : s + step] = d
    return out


def subsample_distances(leaf, idx):
    """Dense distance matrix restricted to the samples ``idx``."""
    idx = np.asarray(idx)
    co = _Cooccurrence(leaf.take(idx))
    d = counts_to_distance(co.block(np.arange(len(idx)), np.arange(len(idx))), leaf.n_trees)
    np.fill_diagonal(d, 0.0)
    return d
