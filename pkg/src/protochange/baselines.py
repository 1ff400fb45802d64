"""Classical unsupervised change detection baselines.

Four pixel-level methods over a co-registered pair: change vector analysis,
block-PCA k-means, iteratively reweighted multivariate alteration detection,
and slow feature analysis. Magnitude-style scores binarize with Otsu;
chi-square statistics binarize at a configurable no-change percentile.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.stats import chi2

from . import _kernels
from .cva import kmeans, pca_fit_transform
from .errors import ConstantScores, DimensionMismatch, SingularCovariance, TooSmallImage
from .raster_io import ChangeMask, ImagePair

_VAR_FLOOR = 1e-12


@dataclass
class ScoreMap:
    """Per-pixel nonnegative change magnitude."""

    scores: np.ndarray  # float64 (h, w)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise DimensionMismatch(f"scores must be 2-D, got {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise DimensionMismatch("non-finite scores")


@dataclass
class IrmadResult:
    score: ScoreMap
    weights: np.ndarray
    canonical_correlations: np.ndarray
    correlation_deltas: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def certificate(self) -> dict:
        """Convergence evidence: per-iteration max correlation movement."""
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_delta": self.correlation_deltas[-1] if self.correlation_deltas else None,
            "deltas": list(self.correlation_deltas),
            "canonical_correlations": self.canonical_correlations.tolist(),
        }


@dataclass
class SfaResult:
    score: ScoreMap
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # column j pairs with eigenvalues[j]
    diff_cov: np.ndarray
    mean_cov: np.ndarray


def otsu_threshold(scores: ScoreMap, bins: int = 256) -> float:
    """Histogram threshold maximizing between-class variance over bin cuts."""
    flat = scores.scores.ravel()
    lo, hi = float(flat.min()), float(flat.max())
    if hi <= lo:
        raise ConstantScores("score map has a single value")
    hist, edges = np.histogram(flat, bins=bins, range=(lo, hi))
    hist = hist.astype(np.float64)
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(hist)[:-1]
    w1 = hist.sum() - w0
    m0 = np.cumsum(hist * centers)[:-1]
    m1 = (hist * centers).sum() - m0
    valid = (w0 > 0) & (w1 > 0)
    var_between = np.zeros(bins - 1)
    var_between[valid] = w0[valid] * w1[valid] * (m0[valid] / w0[valid] - m1[valid] / w1[valid]) ** 2
    cut = int(np.argmax(var_between))
    return float(edges[cut + 1])


def cva_scores(pair: ImagePair) -> ScoreMap:
    """Euclidean magnitude of the per-pixel band difference vector."""
    diff = pair.post.data - pair.pre.data
    return ScoreMap(np.sqrt((diff * diff).sum(axis=2)))


def cva_baseline(pair: ImagePair) -> ChangeMask:
    """Threshold the difference magnitude with Otsu; constant scores mean no change."""
    scores = cva_scores(pair)
    try:
        t = otsu_threshold(scores)
    except ConstantScores:
        return ChangeMask(np.zeros(scores.scores.shape, dtype=bool))
    return ChangeMask(scores.scores > t)


def pca_kmeans_baseline(
    pair: ImagePair, block: int = 4, comps: int = 3, seed: int = 0
) -> ChangeMask:
    """Block-PCA features of the absolute difference image clustered with k=2.

    The PCA basis comes from non-overlapping block-sized tiles; every pixel is
    then described by the projection of its block-sized neighborhood and the
    cluster with the larger mean difference magnitude is labeled changed.
    """
    if block < 2:
        raise ValueError(f"block must be >= 2, got {block}")
    h, w = pair.height, pair.width
    if h < block or w < block:
        raise TooSmallImage(f"{h}x{w} smaller than block {block}")
    diff = np.abs(pair.post.data - pair.pre.data).mean(axis=2)
    if not np.any(diff):
        return ChangeMask(np.zeros((h, w), dtype=bool))

    pad_h = (-h) % block
    pad_w = (-w) % block
    tiled = np.pad(diff, ((0, pad_h), (0, pad_w)), mode="edge")
    th, tw = tiled.shape
    blocks = (
        tiled.reshape(th // block, block, tw // block, block)
        .transpose(0, 2, 1, 3)
        .reshape(-1, block * block)
    )
    comps = min(comps, min(blocks.shape))
    model, _ = pca_fit_transform(blocks, comps)

    # Window for pixel (i, j) spans rows i-block//2 .. i+block-block//2-1.
    lo = block // 2
    hi = block - lo - 1
    padded = np.pad(tiled, ((lo, hi), (lo, hi)), mode="edge")
    feats = _kernels.block_project(
        np.ascontiguousarray(padded),
        model.mean,
        np.ascontiguousarray(model.components),
        block,
    )
    feats = feats[:h, :w].reshape(-1, comps)

    result = kmeans(feats, k=2, seed=seed)
    mag = diff.ravel()
    means = [mag[result.labels == c].mean() if (result.labels == c).any() else -np.inf for c in range(2)]
    changed_id = int(np.argmax(means))
    return ChangeMask((result.labels == changed_id).reshape(h, w))


def _flatten_bands(pair: ImagePair) -> tuple[np.ndarray, np.ndarray]:
    b = pair.bands
    x = pair.pre.data.reshape(-1, b).T.astype(np.float64)
    y = pair.post.data.reshape(-1, b).T.astype(np.float64)
    return x, y


def _inv_sqrt(mat: np.ndarray, ridge: float) -> np.ndarray:
    mat = mat + ridge * np.eye(mat.shape[0])
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() <= 0.0:
        raise SingularCovariance(f"covariance not positive definite (min eig {vals.min():.3g})")
    return (vecs / np.sqrt(vals)) @ vecs.T


def _weighted_moments(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    sw = w.sum()
    mx = (x * w).sum(axis=1, keepdims=True) / sw
    my = (y * w).sum(axis=1, keepdims=True) / sw
    cx = x - mx
    cy = y - my
    stacked = np.concatenate([cx, cy], axis=0)
    cov = (stacked * w) @ stacked.T / sw
    return cx, cy, cov


def irmad(pair: ImagePair, max_iter: int = 30, eps: float = 1e-6, ridge: float = 1e-8) -> IrmadResult:
    """Iteratively reweighted multivariate alteration detection.

    Canonical correlation between the two band sets; the paired canonical
    variate differences form the alteration variates, whose variance-scaled
    square sum is chi-square with one degree of freedom per band under no
    change. Pixels are reweighted by their no-change probability until the
    canonical correlations stop moving.
    """
    x, y = _flatten_bands(pair)
    b, n = x.shape
    weights = np.ones((1, n))
    prev_rho = None
    deltas: list[float] = []
    converged = False
    iterations = 0
    mads = np.zeros((b, n))
    rho = np.zeros(b)
    stat = np.zeros(n)
    for _ in range(max(1, max_iter)):
        iterations += 1
        cx, cy, cov = _weighted_moments(x, y, weights)
        s11 = cov[:b, :b]
        s12 = cov[:b, b:]
        s22 = cov[b:, b:]
        isq1 = _inv_sqrt(s11, ridge)
        isq2 = _inv_sqrt(s22, ridge)
        u, sv, vt = np.linalg.svd(isq1 @ s12 @ isq2, full_matrices=False)
        rho = np.clip(sv, 0.0, 1.0)
        a = isq1 @ u
        bb = isq2 @ vt.T
        mads = a.T @ cx - bb.T @ cy
        sigma2 = np.maximum(2.0 * (1.0 - rho), _VAR_FLOOR)[:, None]
        stat = (mads * mads / sigma2).sum(axis=0)
        weights = (1.0 - chi2.cdf(stat, df=b))[None, :]
        if prev_rho is not None:
            delta = float(np.abs(rho - prev_rho).max())
            deltas.append(delta)
            if delta < eps:
                converged = True
                break
        prev_rho = rho
    score = ScoreMap(stat.reshape(pair.height, pair.width))
    return IrmadResult(
        score=score,
        weights=weights.ravel(),
        canonical_correlations=rho,
        correlation_deltas=deltas,
        converged=converged,
        iterations=iterations,
    )


def irmad_baseline(
    pair: ImagePair,
    max_iter: int = 30,
    eps: float = 1e-6,
    ridge: float = 1e-8,
    percentile: float = 0.99,
) -> tuple[ScoreMap, ChangeMask]:
    result = irmad(pair, max_iter=max_iter, eps=eps, ridge=ridge)
    t = chi2.ppf(percentile, df=pair.bands)
    return result.score, ChangeMask(result.score.scores > t)


def _standardize_bands(img: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per band over pixels; constant bands map to zero."""
    mean = img.mean(axis=1, keepdims=True)
    std = img.std(axis=1, keepdims=True)
    std = np.where(std < _VAR_FLOOR, 1.0, std)
    return (img - mean) / std


def sfa(pair: ImagePair, ridge: float = 1e-8) -> SfaResult:
    """Slow feature analysis change detection.

    Bands are standardized per image; the generalized eigenproblem contrasts
    the difference covariance against the mean covariance, and the per-pixel
    score sums squared projections scaled by their eigenvalues.
    """
    x, y = _flatten_bands(pair)
    b, n = x.shape
    xs = _standardize_bands(x)
    ys = _standardize_bands(y)
    d = xs - ys
    diff_cov = (d @ d.T) / n
    cov_x = (xs @ xs.T) / n
    cov_y = (ys @ ys.T) / n
    mean_cov = 0.5 * (cov_x + cov_y) + ridge * np.eye(b)
    try:
        vals, vecs = sla.eigh(diff_cov, mean_cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    if not np.isfinite(vals).all():
        raise SingularCovariance("generalized eigenvalues not finite")
    proj = vecs.T @ d
    lam = np.maximum(vals, _VAR_FLOOR)[:, None]
    stat = (proj * proj / lam).sum(axis=0)
    return SfaResult(
        score=ScoreMap(stat.reshape(pair.height, pair.width)),
        eigenvalues=vals,
        eigenvectors=vecs,
        diff_cov=diff_cov,
        mean_cov=mean_cov,
    )


def sfa_baseline(
    pair: ImagePair, ridge: float = 1e-8, percentile: float = 0.99
) -> tuple[ScoreMap, ChangeMask]:
    result = sfa(pair, ridge=ridge)
    t = chi2.ppf(percentile, df=pair.bands)
    return result.score, ChangeMask(result.score.scores > t)
