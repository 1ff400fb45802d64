"""Patch partitioning and per-patch embeddings through a pluggable backend.

Two backends share one contract: an image whose sides are multiples of the
patch size maps to a (rows, cols, dim) feature grid, deterministically.

* ``deterministic`` computes per-patch statistics (band means, band standard
  deviations, an 8-bin gradient-orientation histogram) so the full pipeline
  and test suite run without any model file.
* ``neural`` runs a TorchScript model file exported offline; the model must
  return one token per patch. See README for the exact model I/O contract.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ModelLoadFailure, NotMultiple, ShapeMismatch
from .raster_io import PATCH, RasterImage

GRADIENT_BINS = 8

# One inference session per worker thread; sessions are never shared.
_sessions = threading.local()


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    patch: int = PATCH

    @property
    def cells(self) -> int:
        return self.rows * self.cols


@dataclass
class FeatureMap:
    """(rows, cols, dim) embedding grid; all values finite."""

    grid: PatchGrid
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape[:2] != (self.grid.rows, self.grid.cols):
            raise ShapeMismatch(
                f"feature data {self.data.shape[:2]} vs grid "
                f"{(self.grid.rows, self.grid.cols)}"
            )
        if not np.isfinite(self.data).all():
            raise ShapeMismatch("non-finite values in feature map")

    @property
    def dim(self) -> int:
        return self.data.shape[2]


class DifferenceMap(FeatureMap):
    """Elementwise feature difference; same shape contract as FeatureMap."""


@dataclass
class FeatureBackend:
    """Embedding backend spec: kind is 'deterministic' or 'neural'."""

    kind: str = "deterministic"
    dim: int = 16
    model_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "neural"):
            raise ValueError(f"unknown backend kind '{self.kind}'")
        if self.kind == "deterministic" and self.dim < 4:
            raise ValueError(f"deterministic backend needs dim >= 4, got {self.dim}")

    def validate_loadable(self) -> None:
        """Fail fast, before any pixel work, when the model cannot be used."""
        if self.kind != "neural":
            return
        if not self.model_path:
            raise ModelLoadFailure("neural backend requires a model path")
        if not Path(self.model_path).exists():
            raise ModelLoadFailure(f"model file not found: {self.model_path}")
        _load_torchscript(self.model_path)


def patch_grid(width: int, height: int, m: int = PATCH) -> PatchGrid:
    """Grid of m-by-m cells; both dimensions must divide exactly."""
    if width < m or height < m or width % m or height % m:
        raise NotMultiple(f"{width}x{height} is not a positive multiple of {m}")
    return PatchGrid(rows=height // m, cols=width // m, patch=m)


def extract_features(img: RasterImage, backend: FeatureBackend) -> FeatureMap:
    """One embedding per patch; bitwise reproducible for a fixed backend."""
    grid = patch_grid(img.width, img.height)
    if backend.kind == "deterministic":
        data = _patch_statistics(img.data, grid, backend.dim)
    else:
        data = _neural_features(img.data, grid, backend)
    return FeatureMap(grid=grid, data=data)


def feature_difference(a: FeatureMap, b: FeatureMap) -> DifferenceMap:
    """Elementwise b-relative difference: result = f(b) - f(a)."""
    if a.grid != b.grid or a.dim != b.dim:
        raise ShapeMismatch(
            f"grids {a.grid}x{a.dim} vs {b.grid}x{b.dim} do not match"
        )
    diff = b.data.astype(np.float64) - a.data.astype(np.float64)
    return DifferenceMap(grid=a.grid, data=diff)


def _patch_statistics(data: np.ndarray, grid: PatchGrid, dim: int) -> np.ndarray:
    """Per-patch band means + band stds + gradient-orientation histogram.

    The vector is zero-padded or truncated to ``dim``. Gradients are taken
    inside each patch on the band-mean luminance, so the result is invariant
    under image translation by whole patches.
    """
    m = grid.patch
    blocks = data.reshape(grid.rows, m, grid.cols, m, -1).transpose(0, 2, 1, 3, 4)
    means = blocks.mean(axis=(2, 3))
    stds = blocks.std(axis=(2, 3))

    lum = blocks.mean(axis=4)
    gy = np.gradient(lum, axis=2)
    gx = np.gradient(lum, axis=3)
    mag = np.hypot(gy, gx)
    angle = np.arctan2(gy, gx)  # [-pi, pi]
    bins = np.clip(
        ((angle + np.pi) / (2.0 * np.pi) * GRADIENT_BINS).astype(np.int64),
        0,
        GRADIENT_BINS - 1,
    )
    cell_index = (
        np.arange(grid.cells).reshape(grid.rows, grid.cols, 1, 1)
        * GRADIENT_BINS
    )
    # Magnitude-weighted, averaged over patch pixels so the histogram lives on
    # the same intensity scale as the mean/std features.
    hist = np.bincount(
        (bins + cell_index).ravel(),
        weights=mag.ravel(),
        minlength=grid.cells * GRADIENT_BINS,
    ).reshape(grid.rows, grid.cols, GRADIENT_BINS) / float(m * m)

    full = np.concatenate([means, stds, hist], axis=2)
    if full.shape[2] >= dim:
        return np.ascontiguousarray(full[:, :, :dim])
    out = np.zeros((grid.rows, grid.cols, dim), dtype=np.float64)
    out[:, :, : full.shape[2]] = full
    return out


def _load_torchscript(path: str):
    cache = getattr(_sessions, "models", None)
    if cache is None:
        cache = _sessions.models = {}
    if path in cache:
        return cache[path]
    try:
        import torch
    except ImportError as exc:
        raise ModelLoadFailure(
            "neural backend needs the optional 'torch' dependency "
            "(pip install protochange[neural])"
        ) from exc
    try:
        model = torch.jit.load(path, map_location="cpu")
    except Exception as exc:
        raise ModelLoadFailure(f"cannot load model '{path}': {exc}") from exc
    model.eval()
    cache[path] = model
    return model


def _neural_features(data: np.ndarray, grid: PatchGrid, backend: FeatureBackend) -> np.ndarray:
    backend_path = backend.model_path or ""
    if not backend_path or not Path(backend_path).exists():
        raise ModelLoadFailure(f"model file not found: {backend_path or '<unset>'}")
    import torch

    model = _load_torchscript(backend_path)
    tensor = torch.from_numpy(
        np.ascontiguousarray(data.transpose(2, 0, 1)[None]).astype(np.float32)
    )
    with torch.no_grad():
        out = model(tensor)
    tokens = out.detach().cpu().numpy()
    tokens = np.squeeze(tokens, axis=0) if tokens.ndim == 3 else tokens
    if tokens.ndim != 2 or tokens.shape[0] != grid.cells:
        raise ShapeMismatch(
            f"model returned {tokens.shape}, expected ({grid.cells}, dim) tokens"
        )
    if not np.isfinite(tokens).all():
        raise ShapeMismatch("model produced non-finite token values")
    return tokens.reshape(grid.rows, grid.cols, tokens.shape[1]).astype(np.float64)
