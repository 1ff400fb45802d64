"""Raster loading, validation, resizing, and LEVIR-layout dataset ingestion.

Images are held as float64 arrays of shape (height, width, bands) with
intensities normalized to [0, 1] at load time, so downstream math is
scale-stable regardless of source bit depth. Masks persist as 8-bit PNG
(0=unchanged, 255=changed) or GeoTIFF with the input geotransform preserved.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import imageio.v3 as iio
import numpy as np
import tifffile

from .errors import (
    CorruptData,
    DimensionMismatch,
    EmptyDataset,
    MissingFile,
    UnmatchedFile,
    UnsupportedFormat,
)

PATCH = 14

_PNG_EXT = {".png"}
_TIF_EXT = {".tif", ".tiff"}

# GeoTIFF tags carried through load -> save untouched.
_GEO_TAGS = {
    33550: "d",  # ModelPixelScale
    33922: "d",  # ModelTiepoint
    34264: "d",  # ModelTransformation
    34735: "H",  # GeoKeyDirectory
    34736: "d",  # GeoDoubleParams
    34737: "s",  # GeoAsciiParams
}


@dataclass
class RasterImage:
    """Single raster: (height, width, bands) float64 intensities in [0, 1]."""

    data: np.ndarray
    geo: dict | None = None

    def __post_init__(self):
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise CorruptData(f"expected (H, W, B) pixel data, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise CorruptData("non-finite pixel intensities")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise CorruptData("pixel intensities outside [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass
class ImagePair:
    """Co-registered pre/post rasters of identical geometry."""

    pre: RasterImage
    post: RasterImage

    def __post_init__(self):
        if self.pre.data.shape != self.post.data.shape:
            raise DimensionMismatch(
                f"pre {self.pre.data.shape} vs post {self.post.data.shape}"
            )

    @property
    def height(self) -> int:
        return self.pre.height

    @property
    def width(self) -> int:
        return self.pre.width

    @property
    def bands(self) -> int:
        return self.pre.bands


@dataclass
class ChangeMask:
    """Per-pixel binary change decision (True = changed)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        if self.values.ndim != 2:
            raise CorruptData(f"mask must be 2-D, got shape {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def changed_count(self) -> int:
        return int(self.values.sum())


@dataclass
class DatasetSample:
    """One LEVIR-layout sample; rasters load lazily on property access."""

    id: str
    pre_path: Path
    post_path: Path
    label_path: Path | None = None

    @property
    def pair(self) -> ImagePair:
        return load_pair(self.pre_path, self.post_path)

    @property
    def label(self) -> ChangeMask | None:
        if self.label_path is None:
            return None
        mask = load_mask(self.label_path)
        pair_shape = _probe_shape(self.pre_path)
        if mask.values.shape != pair_shape:
            raise DimensionMismatch(
                f"label {mask.values.shape} vs pair {pair_shape} for sample '{self.id}'"
            )
        return mask


def _check_path(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingFile(str(p))
    ext = p.suffix.lower()
    if ext not in _PNG_EXT | _TIF_EXT:
        raise UnsupportedFormat(f"{p}: expected PNG or GeoTIFF, got '{ext or '<none>'}'")
    return p


def _normalize(arr: np.ndarray, path: Path) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    raise UnsupportedFormat(f"{path}: unsupported sample type {arr.dtype}, need 8/16-bit")


def _read_geo(path: Path) -> dict | None:
    try:
        with tifffile.TiffFile(path) as tf:
            page = tf.pages[0]
            geo = {}
            for code in _GEO_TAGS:
                tag = page.tags.get(code)
                if tag is not None:
                    geo[code] = tag.value
            return geo or None
    except Exception:
        return None


def load_image(path) -> RasterImage:
    """Load an 8/16-bit PNG or GeoTIFF, normalized by the format's max value."""
    p = _check_path(path)
    try:
        if p.suffix.lower() in _TIF_EXT:
            arr = tifffile.imread(p)
            geo = _read_geo(p)
        else:
            arr = iio.imread(p)
            geo = None
    except Exception as exc:
        raise CorruptData(f"{p}: {exc}") from exc
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[0] <= 4 and arr.shape[0] < arr.shape[2]:
        arr = np.moveaxis(arr, 0, 2)  # band-first TIFF layout
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise CorruptData(f"{p}: undecodable pixel layout {arr.shape}")
    return RasterImage(_normalize(arr, p), geo=geo)


def _probe_shape(path) -> tuple[int, int]:
    img = load_image(path)
    return img.height, img.width


def load_mask(path) -> ChangeMask:
    """Load a binary mask PNG/GeoTIFF; values above half-scale count as changed."""
    img = load_image(path)
    return ChangeMask(img.data[:, :, 0] > 0.5)


def save_mask(mask: ChangeMask, path, geo: dict | None = None) -> None:
    """Write a mask as 8-bit single-channel PNG (0/255) or GeoTIFF."""
    p = Path(path)
    arr = np.where(mask.values, 255, 0).astype(np.uint8)
    if p.suffix.lower() in _TIF_EXT:
        extratags = []
        for code, fmt in _GEO_TAGS.items():
            if geo and code in geo:
                value = geo[code]
                extratags.append((code, fmt, len(value), value, False))
        tifffile.imwrite(p, arr, extratags=extratags)
    else:
        iio.imwrite(p, arr, extension=".png")


def resize_to_patch_multiple(img: RasterImage, m: int = PATCH) -> RasterImage:
    """Bilinear-resize to the nearest positive multiple of m per axis (never below m)."""
    if m < 1:
        raise ValueError(f"patch size must be >= 1, got {m}")
    th = max(1, int(np.floor(img.height / m + 0.5))) * m
    tw = max(1, int(np.floor(img.width / m + 0.5))) * m
    if (th, tw) == (img.height, img.width):
        return img
    return RasterImage(_bilinear_resize(img.data, th, tw), geo=img.geo)


def _bilinear_resize(data: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resampling with edge clamping."""
    h, w = data.shape[:2]
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = data[y0][:, x0] * (1 - wx) + data[y0][:, x1] * wx
    bot = data[y1][:, x0] * (1 - wx) + data[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(out, 0.0, 1.0)


def resize_mask_nearest(values: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Nearest-neighbor resize for masks and label maps (dtype preserved)."""
    h, w = values.shape[:2]
    ys = np.minimum(((np.arange(th) + 0.5) * (h / th)).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(tw) + 0.5) * (w / tw)).astype(np.int64), w - 1)
    return values[np.ix_(ys, xs)]


def load_pair(path_pre, path_post) -> ImagePair:
    """Load and validate a co-registered pre/post pair."""
    return ImagePair(load_image(path_pre), load_image(path_post))


def load_dataset(root) -> list[DatasetSample]:
    """Ingest a LEVIR-layout dataset: root/A, root/B, optionally root/label.

    One sample per filename matched across A and B, sorted lexicographically.
    """
    rootp = Path(root)
    dir_a, dir_b, dir_label = rootp / "A", rootp / "B", rootp / "label"
    if not dir_a.is_dir() or not dir_b.is_dir():
        raise EmptyDataset(f"{rootp}: expected subdirectories A/ and B/")
    names_a = {p.name for p in dir_a.iterdir() if p.suffix.lower() in _PNG_EXT | _TIF_EXT}
    names_b = {p.name for p in dir_b.iterdir() if p.suffix.lower() in _PNG_EXT | _TIF_EXT}
    for name in sorted(names_a - names_b):
        raise UnmatchedFile(f"'{name}' present in A/ but not B/")
    for name in sorted(names_b - names_a):
        raise UnmatchedFile(f"'{name}' present in B/ but not A/")
    names = sorted(names_a)
    if not names:
        raise EmptyDataset(f"{rootp}: no raster files under A/")
    has_labels = dir_label.is_dir()
    samples = []
    for name in names:
        label_path = None
        if has_labels:
            label_path = dir_label / name
            if not label_path.exists():
                raise UnmatchedFile(f"'{name}' present in A/ but not label/")
        samples.append(
            DatasetSample(
                id=os.path.splitext(name)[0],
                pre_path=dir_a / name,
                post_path=dir_b / name,
                label_path=label_path,
            )
        )
    return samples
