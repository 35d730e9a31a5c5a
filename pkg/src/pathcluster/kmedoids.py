"""k-medoids over precomputed distances: PAM and CLARA.

Two swap strategies are available. ``pam_naive`` scans every
(medoid, non-medoid) pair per sweep and applies the single best swap.
``pam_fast`` walks the non-medoids once per sweep and applies the best swap
for each candidate as soon as it improves the inertia (the FasterPAM
acceptance rule). Both evaluate a swap in O(n) from cached nearest and
second-nearest medoid distances, and re-verify the inertia from scratch
before committing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .proximity import DistanceMatrix, distance_to_points, subsample_distances
from .rng import child_rng, child_seed

PAM_NAIVE = "pam_naive"
PAM_FAST = "pam_fast"
GREEDY = "greedy"
RANDOM = "random"
PAM = "pam"
CLARA = "clara"

_REL_TOL = 1e-12


@dataclass(frozen=True)
class KMedoidsConfig:
    k: int
    max_iter: int = 200
    variant: str = PAM_FAST
    seed: int = 0
    init: str = GREEDY

    def validate(self, n=None):
        if self.k < 2:
            raise ValidationError("k must be >= 2")
        if n is not None and self.k >= n:
            raise ValidationError(f"k={self.k} must be smaller than the sample count {n}")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.variant not in (PAM_NAIVE, PAM_FAST):
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.init not in (GREEDY, RANDOM):
            raise ValidationError(f"unknown init {self.init!r}")


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    """Medoids are sample indices in ascending order; ``assignments[i]`` indexes into them."""

    medoids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_used: int
    converged: bool

    @property
    def k(self):
        return len(self.medoids)

    def cluster_sizes(self):
        return np.bincount(self.assignments, minlength=self.k)

    def to_dict(self):
        return {
            "k": self.k,
            "medoids": [int(m) for m in self.medoids],
            "inertia": float(self.inertia),
            "iterations_used": int(self.iterations_used),
            "converged": bool(self.converged),
        }

    def __eq__(self, other):
        return (
            isinstance(other, ClusteringResult)
            and np.array_equal(self.medoids, other.medoids)
            and np.array_equal(self.assignments, other.assignments)
            and self.inertia == other.inertia
        )


def _as_dense(distances):
    if isinstance(distances, DistanceMatrix):
        d = distances.to_array()
    else:
        d = np.asarray(distances)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError("distances must be a square matrix")
    if not np.all(np.isfinite(d)):
        raise ValidationError("distances contain non-finite values")
    return d


def assign(distances_to_medoids, medoids=None):
    """Nearest-medoid assignment.

    Parameters
    ----------
    distances_to_medoids : array (n, k)
    medoids : sequence of k sample indices, optional
        When given, each medoid row is pinned to its own cluster.

    Returns
    -------
    assignments : int array (n,)
        Column of the nearest medoid; ties go to the lowest column.
    inertia : float
    """
    d = np.asarray(distances_to_medoids)
    if d.ndim != 2 or d.shape[1] == 0:
        raise ValidationError("at least one medoid is required")
    labels = np.argmin(d, axis=1)
    if medoids is not None:
        labels[np.asarray(medoids)] = np.arange(len(medoids))
    inertia = float(np.sum(d[np.arange(d.shape[0]), labels], dtype=np.float64))
    return labels, inertia


def _nearest_two(D, medoids):
    dm = np.asarray(D[:, medoids], dtype=np.float64)
    if len(medoids) == 1:
        near = np.zeros(D.shape[0], dtype=np.int64)
        return near, dm[:, 0].copy(), np.full(D.shape[0], np.inf)
    order = np.argsort(dm, axis=1, kind="stable")
    rows = np.arange(D.shape[0])
    near = order[:, 0]
    return near, dm[rows, near], dm[rows, order[:, 1]]


def total_inertia(D, medoids):
    _, inertia = assign(np.asarray(D[:, np.asarray(medoids)], dtype=np.float64), medoids)
    return inertia


def build(D, k):
    """Greedy BUILD: the first medoid minimizes total distance, each further
    medoid maximizes the drop in inertia. Ties go to the lowest index."""
    n = D.shape[0]
    first = int(np.argmin(np.sum(D, axis=1, dtype=np.float64)))
    medoids = [first]
    dnear = np.asarray(D[first], dtype=np.float64).copy()
    is_medoid = np.zeros(n, dtype=bool)
    is_medoid[first] = True
    chunk = max(1, 2**22 // max(1, n))
    for _ in range(1, k):
        gains = np.empty(n)
        for s in range(0, n, chunk):
            block = np.asarray(D[s : s + chunk], dtype=np.float64)
            gains[s : s + chunk] = np.maximum(dnear[None, :] - block, 0.0).sum(axis=1)
        gains[is_medoid] = -np.inf
        c = int(np.argmax(gains))
        medoids.append(c)
        is_medoid[c] = True
        dnear = np.minimum(dnear, D[c])
    return medoids


def _swap_deltas(drow, near, dnear, dsec, k):
    """Change in inertia for replacing each medoid slot by the candidate with row ``drow``."""
    drow = np.asarray(drow, dtype=np.float64)
    gain = np.minimum(drow - dnear, 0.0)
    shared = gain.sum()
    own = np.minimum(drow, dsec) - dnear - gain
    return shared + np.bincount(near, weights=own, minlength=k)


def _swap_deltas_all(D, candidates, near, dnear, dsec, k):
    """Deltas for many candidates at once, shape (len(candidates), k)."""
    out = np.empty((len(candidates), k))
    onehot = np.zeros((D.shape[0], k))
    onehot[np.arange(D.shape[0]), near] = 1.0
    chunk = max(1, 2**21 // max(1, D.shape[0]))
    for s in range(0, len(candidates), chunk):
        rows = np.asarray(D[candidates[s : s + chunk]], dtype=np.float64)
        gain = np.minimum(rows - dnear[None, :], 0.0)
        own = np.minimum(rows, dsec[None, :]) - dnear[None, :] - gain
        out[s : s + chunk] = gain.sum(axis=1)[:, None] + own @ onehot
    return out


def _tolerance(D):
    return _REL_TOL * max(1.0, float(D.shape[0]))


def pam(distances, config):
    """Partitioning Around Medoids on a full distance matrix.

    Returns a :class:`ClusteringResult` whose medoids are sorted ascending.
    ``iterations_used`` counts swap sweeps; ``converged`` is True when the
    last sweep found no improving swap.
    """
    D = _as_dense(distances)
    n = D.shape[0]
    config.validate(n)
    k = config.k
    tol = _tolerance(D)

    if config.init == GREEDY:
        medoids = build(D, k)
    else:
        medoids = [int(m) for m in child_rng(config.seed, "init").choice(n, size=k, replace=False)]
    medoids = np.array(medoids, dtype=np.int64)
    is_medoid = np.zeros(n, dtype=bool)
    is_medoid[medoids] = True
    near, dnear, dsec = _nearest_two(D, medoids)
    current = total_inertia(D, medoids)

    def try_swap(slot, o):
        nonlocal current, near, dnear, dsec
        trial = medoids.copy()
        trial[slot] = o
        value = total_inertia(D, trial)
        if value < current - tol:
            is_medoid[medoids[slot]] = False
            is_medoid[o] = True
            medoids[slot] = o
            current = value
            near, dnear, dsec = _nearest_two(D, medoids)
            return True
        return False

    converged = False
    sweeps = 0
    for sweeps in range(1, config.max_iter + 1):
        improved = False
        if config.variant == PAM_FAST:
            for o in range(n):
                if is_medoid[o]:
                    continue
                deltas = _swap_deltas(D[o], near, dnear, dsec, k)
                slot = int(np.argmin(deltas))
                if deltas[slot] < -tol and try_swap(slot, o):
                    improved = True
        else:
            candidates = np.flatnonzero(~is_medoid)
            deltas = _swap_deltas_all(D, candidates, near, dnear, dsec, k)
            flat = int(np.argmin(deltas))
            ci, slot = divmod(flat, k)
            if deltas[ci, slot] < -tol:
                improved = try_swap(slot, int(candidates[ci]))
        if not improved:
            converged = True
            break
    return _finish(D, medoids, sweeps, converged)


def _finish(D, medoids, sweeps, converged):
    medoids = np.sort(np.asarray(medoids, dtype=np.int64))
    labels, inertia = assign(np.asarray(D[:, medoids], dtype=np.float64), medoids)
    return ClusteringResult(medoids, labels, inertia, sweeps, converged)


@dataclass(frozen=True)
class ClaraConfig:
    """CLARA settings; ``subsample_size=None`` means ``min(n, 40 + 2k^2)``."""

    inner: KMedoidsConfig
    T: int = 5
    subsample_size: int | None = None
    seed: int = 0

    def resolved_size(self, n):
        if self.subsample_size is None:
            return min(n, 40 + 2 * self.inner.k**2)
        return self.subsample_size

    def validate(self, n):
        if self.T < 1:
            raise ValidationError("T must be >= 1")
        size = self.resolved_size(n)
        if size <= self.inner.k:
            raise ValidationError(f"subsample size {size} must exceed k={self.inner.k}")
        if size > n:
            raise ValidationError(f"subsample size {size} exceeds the sample count {n}")
        self.inner.validate(size)


def clara(leaf, config, threads=1):
    """CLARA over forest distances.

    Each iteration draws a uniform subsample without replacement, runs PAM on
    its distance matrix, assigns every sample to the nearest of the found
    medoids and scores the full-data inertia. The iteration with the lowest
    inertia wins (earliest on ties).
    """
    n = leaf.n
    config.validate(n)
    size = config.resolved_size(n)

    def one(t):
        if size == n:
            idx = np.arange(n)
        else:
            idx = np.sort(child_rng(config.seed, "clara", t).choice(n, size=size, replace=False))
        inner = replace(config.inner, seed=child_seed(config.seed, "clara-init", t)) if config.inner.init == RANDOM else config.inner
        sub = pam(subsample_distances(leaf, idx), inner)
        medoids = idx[sub.medoids]
        labels, inertia = assign(distance_to_points(leaf, medoids), medoids)
        return inertia, t, ClusteringResult(medoids, labels, inertia, sub.iterations_used, sub.converged)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(one, range(config.T)))
    else:
        runs = [one(t) for t in range(config.T)]
    return min(runs, key=lambda r: (r[0], r[1]))[2]

