"""Segment-overlap refinement of coarse block-resolution change masks.

A segment is kept when the fraction of its own area covered by the coarse
mask strictly exceeds the threshold; the refined mask is the union of the
kept segments (optionally unioned with the coarse mask for ablation).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import imageio.v3 as iio
import numpy as np

from . import _kernels
from .errors import CorruptData, DimensionMismatch, MissingFile
from .raster_io import ChangeMask, RasterImage


@dataclass
class SegmentMap:
    """Per-pixel segment ids, contiguous from 1; 0 is unsegmented background."""

    labels: np.ndarray  # int32 (h, w)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise CorruptData(f"segment labels must be 2-D, got {self.labels.shape}")
        if self.labels.min() < 0:
            raise CorruptData("negative segment id")

    @property
    def count(self) -> int:
        return int(self.labels.max())

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def sizes(self) -> np.ndarray:
        """Pixel count per id, index 0 = background."""
        return np.bincount(self.labels.ravel(), minlength=self.count + 1)


def load_segments(path, expected_shape: tuple[int, int] | None = None) -> SegmentMap:
    """Load a 16-bit single-channel PNG segment map, ids relabeled contiguous.

    Relabeling preserves row-major order of first appearance; 0 stays
    background.
    """
    p = Path(path)
    if not p.exists():
        raise MissingFile(str(p))
    try:
        arr = iio.imread(p)
    except Exception as exc:
        raise CorruptData(f"{p}: {exc}") from exc
    if arr.ndim != 2:
        raise CorruptData(f"{p}: segment map must be single-channel, got {arr.shape}")
    if expected_shape is not None and arr.shape != tuple(expected_shape):
        raise DimensionMismatch(f"{p}: {arr.shape} vs expected {tuple(expected_shape)}")
    return SegmentMap(_kernels.relabel_first_appearance(arr.astype(np.int32)))


def save_segments(segments: SegmentMap, path) -> None:
    """Persist as 16-bit single-channel PNG."""
    if segments.count > 65535:
        raise CorruptData(f"{segments.count} segments exceed 16-bit id range")
    iio.imwrite(Path(path), segments.labels.astype(np.uint16), extension=".png")


def builtin_segments(img: RasterImage, quant_levels: int = 8, min_size: int = 32) -> SegmentMap:
    """Deterministic intensity-quantization segmenter.

    4-connected components of the per-band quantized image; components below
    ``min_size`` merge into their largest touching neighbor.
    """
    levels = np.clip((img.data * quant_levels).astype(np.int64), 0, quant_levels - 1)
    flat = levels.reshape(-1, img.bands)
    _, key = np.unique(flat, axis=0, return_inverse=True)
    key = np.ascontiguousarray(key.reshape(img.height, img.width).astype(np.int64))
    labels = _kernels.label_components(key)
    labels = _merge_small(labels, min_size)
    return SegmentMap(_kernels.relabel_first_appearance(labels))


def _merge_small(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Union small components into their largest 4-adjacent neighbor.

    Smallest components merge first (ties by id); sizes are tracked through
    a union-find so later decisions see earlier merges.
    """
    n = int(labels.max())
    if n <= 1:
        return labels
    sizes = np.bincount(labels.ravel(), minlength=n + 1).astype(np.int64)
    adj: dict[int, set[int]] = {i: set() for i in range(1, n + 1)}
    for a, b in _adjacent_pairs(labels):
        adj[a].add(b)
        adj[b].add(a)

    parent = list(range(n + 1))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    order = sorted(range(1, n + 1), key=lambda i: (sizes[i], i))
    for seg in order:
        root = find(seg)
        if root != seg or sizes[root] >= min_size:
            continue
        neighbors = {find(other) for other in adj[seg]} - {root}
        if not neighbors:
            continue
        target = max(neighbors, key=lambda i: (sizes[i], -i))
        parent[root] = target
        sizes[target] += sizes[root]
        adj[target] |= adj[root]

    lut = np.array([find(i) for i in range(n + 1)], dtype=np.int32)
    return lut[labels]


def _adjacent_pairs(labels: np.ndarray):
    h_pairs = np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1)
    v_pairs = np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1)
    pairs = np.concatenate([h_pairs, v_pairs])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    return [(int(a), int(b)) for a, b in pairs if a > 0 and b > 0]


def refine(
    coarse: ChangeMask,
    segments: SegmentMap,
    threshold: float = 0.7,
    union_with_coarse: bool = False,
) -> ChangeMask:
    """Keep whole segments whose coarse-mask overlap fraction exceeds ``threshold``.

    Overlap is measured against the segment's own area; pixels outside every
    kept segment come out unchanged unless ``union_with_coarse`` is set.
    """
    if coarse.values.shape != segments.shape:
        raise DimensionMismatch(f"coarse {coarse.values.shape} vs segments {segments.shape}")
    n = segments.count
    sizes, inter = _kernels.overlap_counts(
        segments.labels, np.ascontiguousarray(coarse.values), n
    )
    keep = np.zeros(n + 1, dtype=bool)
    nonzero = sizes[1:] > 0
    keep[1:][nonzero] = (inter[1:][nonzero] / sizes[1:][nonzero]) > threshold
    out = keep[segments.labels]
    if union_with_coarse:
        out = out | coarse.values
    return ChangeMask(out)


def retained_ids(coarse: ChangeMask, segments: SegmentMap, threshold: float = 0.7) -> list[int]:
    """Segment ids that the refinement step would keep."""
    sizes, inter = _kernels.overlap_counts(
        segments.labels, np.ascontiguousarray(coarse.values), segments.count
    )
    ids = []
    for i in range(1, segments.count + 1):
        if sizes[i] > 0 and inter[i] / sizes[i] > threshold:
            ids.append(i)
    return ids
