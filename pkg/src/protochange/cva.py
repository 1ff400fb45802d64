"""Change-vector core: concatenation, PCA reduction, k-means, cluster choice.

Every cell of the patch grid is one sample. The three difference maps are
concatenated per cell into an n x 3D matrix, reduced by PCA, clustered with
seeded k-means, and the cluster holding the prototype cells becomes the
change cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DegenerateData,
    EmptyPrototypeCells,
    InvalidComponentCount,
    ShapeMismatch,
    TooFewPoints,
)
from .features import DifferenceMap, PatchGrid
from .raster_io import ChangeMask


@dataclass
class ChangeVectors:
    """Row i holds cell (i // cols, i % cols) of the grid."""

    grid: PatchGrid
    data: np.ndarray  # (cells, 3 * dim)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (c, d), orthonormal rows
    explained_variance: np.ndarray  # (c,), non-increasing

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) @ self.components.T


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, c)
    labels: np.ndarray  # (n,)
    inertia: float
    iterations: int
    inertia_history: list[float] = field(default_factory=list)


@dataclass
class CoarseChangeMap:
    grid: PatchGrid
    cells: np.ndarray  # bool (rows, cols)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.shape != (self.grid.rows, self.grid.cols):
            raise ShapeMismatch(
                f"cells {self.cells.shape} vs grid {(self.grid.rows, self.grid.cols)}"
            )


def build_change_vectors(
    s21: DifferenceMap, s11: DifferenceMap, s22: DifferenceMap
) -> ChangeVectors:
    """Concatenate the three difference maps per cell, columns [s21 | s11 | s22]."""
    if not (s21.grid == s11.grid == s22.grid) or not (s21.dim == s11.dim == s22.dim):
        raise ShapeMismatch("difference maps must share grid and dim")
    grid = s21.grid
    stacked = np.concatenate([s21.data, s11.data, s22.data], axis=2)
    return ChangeVectors(grid=grid, data=stacked.reshape(grid.cells, 3 * s21.dim))


def pca_fit_transform(x: np.ndarray, c: int = 1) -> tuple[PcaModel, np.ndarray]:
    """Top-c principal components via SVD of the column-centered matrix.

    Sign convention: each component's largest-magnitude entry is positive, so
    results are reproducible across runs and platforms.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise TooFewPoints(f"PCA needs at least 2 samples, got {n}")
    if c < 1 or c > min(n, d):
        raise InvalidComponentCount(f"c={c} outside [1, {min(n, d)}]")
    mean = x.mean(axis=0)
    centered = x - mean
    if not np.any(centered):
        raise DegenerateData("zero total variance")
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:c]
    flip = np.sign(components[np.arange(c), np.argmax(np.abs(components), axis=1)])
    components = components * flip[:, None]
    model = PcaModel(
        mean=mean,
        components=components,
        explained_variance=(s[:c] ** 2) / (n - 1),
    )
    return model, centered @ components.T


def kmeans(
    x: np.ndarray,
    k: int = 2,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    n_init: int = 10,
) -> KMeansResult:
    """Seeded k-means++ plus Lloyd iterations; deterministic given the seed.

    Runs ``n_init`` independent initializations from the one seeded generator
    and keeps the lowest-inertia result (first on ties). Empty clusters are
    repaired by promoting the point farthest from its assigned centroid.
    Inertia is non-increasing across iterations within every run.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < k:
        raise TooFewPoints(f"{n} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    for _ in range(max(1, n_init)):
        result = _kmeans_single(x, k, rng, max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def _kmeans_single(x, k, rng, max_iter, tol) -> KMeansResult:
    centroids = _kmeans_pp_init(x, k, rng)
    labels = _kernels.kmeans_assign(x, centroids)
    history: list[float] = []
    prev_inertia = np.inf
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        prev_centroids = centroids.copy()
        labels, centroids = _lloyd_step(x, labels, centroids, k)
        inertia = _inertia(x, labels, centroids)
        if inertia > prev_inertia + 1e-12:
            raise AssertionError("k-means inertia increased")
        history.append(inertia)
        prev_inertia = inertia
        shift = np.sqrt(((centroids - prev_centroids) ** 2).sum(axis=1)).max()
        if shift < tol:
            break
    return KMeansResult(
        centroids=centroids,
        labels=labels,
        inertia=float(prev_inertia),
        iterations=iterations,
        inertia_history=history,
    )


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = _kernels.point_sq_dists(x, centroids[0])
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        centroids[i] = x[idx]
        d2 = np.minimum(d2, _kernels.point_sq_dists(x, centroids[i]))
    return centroids


def _lloyd_step(x, labels, centroids, k):
    sums, counts = _kernels.kmeans_update(x, labels, k)
    new_centroids = centroids.copy()
    nonempty = counts > 0
    new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
    labels = _kernels.kmeans_assign(x, new_centroids)
    labels, new_centroids = _repair_empty(x, labels, new_centroids, k)
    return labels, new_centroids


def _repair_empty(x, labels, centroids, k):
    counts = np.bincount(labels, minlength=k)
    while (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        dists = ((x - centroids[labels]) ** 2).sum(axis=1)
        donor = int(np.argmax(dists))
        labels[donor] = empty
        centroids[empty] = x[donor]
        counts = np.bincount(labels, minlength=k)
    return labels, centroids


def _inertia(x, labels, centroids) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def assign_change_cluster(
    labels: np.ndarray, proto_cells: set[tuple[int, int]], s21: DifferenceMap
) -> int:
    """Majority vote of cluster labels over the prototype cells.

    Ties go to the cluster whose member cells carry the larger mean temporal
    difference magnitude.
    """
    if not proto_cells:
        raise EmptyPrototypeCells("prototype covers no grid cell")
    grid = s21.grid
    label_grid = np.asarray(labels).reshape(grid.rows, grid.cols)
    votes: dict[int, int] = {}
    for r, c in proto_cells:
        if not (0 <= r < grid.rows and 0 <= c < grid.cols):
            raise EmptyPrototypeCells(f"cell {(r, c)} outside grid")
        cid = int(label_grid[r, c])
        votes[cid] = votes.get(cid, 0) + 1
    best = max(votes.values())
    tied = sorted(cid for cid, v in votes.items() if v == best)
    if len(tied) == 1:
        return tied[0]
    mags = np.linalg.norm(s21.data, axis=2)
    means = [mags[label_grid == cid].mean() for cid in tied]
    return tied[int(np.argmax(means))]


def vote_tally(labels: np.ndarray, proto_cells: set[tuple[int, int]], grid: PatchGrid) -> dict[int, int]:
    label_grid = np.asarray(labels).reshape(grid.rows, grid.cols)
    tally: dict[int, int] = {}
    for r, c in proto_cells:
        cid = int(label_grid[r, c])
        tally[cid] = tally.get(cid, 0) + 1
    return tally


def coarse_map(labels: np.ndarray, change_id: int, grid: PatchGrid) -> CoarseChangeMap:
    """Cell is changed iff its cluster label equals the change cluster id."""
    cells = np.asarray(labels).reshape(grid.rows, grid.cols) == change_id
    return CoarseChangeMap(grid=grid, cells=cells)


def upsample(coarse: CoarseChangeMap) -> ChangeMask:
    """Replicate each cell decision into its patch-sized pixel block."""
    m = coarse.grid.patch
    return ChangeMask(np.kron(coarse.cells, np.ones((m, m), dtype=bool)))
