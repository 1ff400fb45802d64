"""Pure numpy/scipy implementations of the hot kernels.

Reference path; selected when numba is unavailable or disabled via
PROTOCHANGE_DISABLE_NUMBA. Results match the numba path on all tested
fixtures (same arithmetic, same tie-break rules).
"""
import numpy as np
from scipy import ndimage

KERNEL_BACKEND = "numpy"

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def kmeans_assign(x, centroids):
    """Nearest-centroid label per row; ties go to the lowest centroid index."""
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.int64)


def kmeans_update(x, labels, k):
    """Per-cluster coordinate sums and member counts."""
    d = x.shape[1]
    sums = np.zeros((k, d), dtype=np.float64)
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts

def point_sq_dists(x, centroid):
    """Squared euclidean distance of every row to one centroid."""
    diff = x - centroid[None, :]
    return (diff * diff).sum(axis=1)


def label_components(key):
    """4-connected components of an integer key map.

    Pixels join a component when their keys are equal. Labels are contiguous
    from 1 in row-major order of first appearance.
    """
    h, w = key.shape
    labels = np.zeros((h, w), dtype=np.int32)
    offset = 0
    for value in np.unique(key):
        part, n = ndimage.label(key == value, structure=_FOUR_CONN)
        mask = part > 0
        labels[mask] = part[mask] + offset
        offset += n
    return relabel_first_appearance(labels)


def relabel_first_appearance(labels):
    """Remap positive labels to contiguous 1..M by row-major first appearance."""
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    order = np.argsort(first, kind="stable")
    lut = np.zeros(int(ids.max()) + 1 if ids.size else 1, dtype=np.int32)
    lut[ids[order]] = np.arange(1, ids.size + 1, dtype=np.int32)
    return lut[labels]


def overlap_counts(labels, mask, nseg):
    """Per-segment pixel count and count of pixels under the mask.

    Index 0 is the unsegmented background.
    """
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=nseg + 1).astype(np.int64)
    inter = np.bincount(flat[mask.ravel()], minlength=nseg + 1).astype(np.int64)
    return sizes, inter


def block_project(padded, mean, comps, block):
    """Project every block-sized sliding window onto the given components.

    Window for output pixel (i, j) is padded[i:i+block, j:j+block]; the caller
    pads so that this window is centered (block//2 margin on top/left).
    """
    h = padded.shape[0] - block + 1
    w = padded.shape[1] - block + 1
    windows = np.lib.stride_tricks.sliding_window_view(padded, (block, block))
    flat = windows.reshape(h, w, block * block)
    return np.tensordot(flat - mean, comps.T, axes=([2], [0]))
