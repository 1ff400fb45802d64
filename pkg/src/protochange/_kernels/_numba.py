"""Numba-compiled implementations of the hot kernels.

Same contracts and tie-break rules as _numpy. No fastmath: reductions must
stay in deterministic order so runs are reproducible.
"""
import numpy as np
from numba import njit

from ._numpy import relabel_first_appearance

KERNEL_BACKEND = "numba"


@njit(cache=True)
def kmeans_assign(x, centroids):
    n, d = x.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = 0
        best_d2 = np.inf
        for c in range(k):
            s = 0.0
            for j in range(d):
                t = x[i, j] - centroids[c, j]
                s += t * t
            if s < best_d2:
                best_d2 = s
                best = c
        labels[i] = best
    return labels


@njit(cache=True)
def kmeans_update(x, labels, k):
    n, d = x.shape
    sums = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        c = labels[i]
        counts[c] += 1
        for j in range(d):
            sums[c, j] += x[i, j]
    return sums, counts


@njit(cache=True)
def point_sq_dists(x, centroid):
    n, d = x.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        s = 0.0
        for j in range(d):
            t = x[i, j] - centroid[j]
            s += t * t
        out[i] = s
    return out


@njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


@njit(cache=True)
def _label_components_raw(key):
    h, w = key.shape
    parent = np.arange(h * w, dtype=np.int64)
    for i in range(h):
        for j in range(w):
            idx = i * w + j
            if j > 0 and key[i, j - 1] == key[i, j]:
                ra = _find(parent, idx)
                rb = _find(parent, idx - 1)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            if i > 0 and key[i - 1, j] == key[i, j]:
                ra = _find(parent, idx)
                rb = _find(parent, idx - w)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    labels = np.empty((h, w), dtype=np.int32)
    root_id = np.full(h * w, -1, dtype=np.int32)
    next_id = 0
    for i in range(h):
        for j in range(w):
            r = _find(parent, i * w + j)
            if root_id[r] < 0:
                next_id += 1
                root_id[r] = next_id
            labels[i, j] = root_id[r]
    return labels


def label_components(key):
    # Union-find already emits first-appearance order; relabel is a no-op
    # kept for strict parity with the numpy path.
    return relabel_first_appearance(_label_components_raw(key))


@njit(cache=True)
def overlap_counts(labels, mask, nseg):
    h, w = labels.shape
    sizes = np.zeros(nseg + 1, dtype=np.int64)
    inter = np.zeros(nseg + 1, dtype=np.int64)
    for i in range(h):
        for j in range(w):
            s = labels[i, j]
            sizes[s] += 1
            if mask[i, j]:
                inter[s] += 1
    return sizes, inter


@njit(cache=True)
def block_project(padded, mean, comps, block):
    h = padded.shape[0] - block + 1
    w = padded.shape[1] - block + 1
    c = comps.shape[0]
    out = np.empty((h, w, c), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            for cc in range(c):
                s = 0.0
                idx = 0
                for a in range(block):
                    for b in range(block):
                        s += (padded[i + a, j + b] - mean[idx]) * comps[cc, idx]
                        idx += 1
                out[i, j, cc] = s
    return out
