"""Precompute per-image segment maps as 16-bit PNGs.

Uses a SAM automatic mask generator when the package and a checkpoint are
available; otherwise falls back to deterministic felzenszwalb segmentation.
Either way the output follows the same contract: single-channel 16-bit PNG,
segment ids contiguous from 1, 0 reserved for background.
"""
from __future__ import annotations

import logging
from pathlib import Path

import imageio.v3 as iio
import numpy as np
from skimage.segmentation import felzenszwalb

from .manifest import ExportManifest, sha256_of

log = logging.getLogger(__name__)

_EXTS = {".png", ".tif", ".tiff"}


def relabel_contiguous(labels: np.ndarray) -> np.ndarray:
    """Ids 1..M in row-major first-appearance order, 0 kept as background."""
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    order = np.argsort(first, kind="stable")
    lut = np.zeros(int(ids.max()) + 1 if ids.size else 1, dtype=np.int64)
    lut[ids[order]] = np.arange(1, ids.size + 1)
    return lut[labels]


def _load_rgb(path: Path) -> np.ndarray:
    arr = iio.imread(path)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=2)
    if arr.shape[2] > 3:
        arr = arr[:, :, :3]
    if arr.dtype == np.uint16:
        return (arr / 65535.0).astype(np.float64)
    return (arr / 255.0).astype(np.float64)


def segment_classical(rgb: np.ndarray, scale: float = 100.0, sigma: float = 0.8, min_size: int = 32) -> np.ndarray:
    """Deterministic graph-based segmentation covering every pixel."""
    labels = felzenszwalb(rgb, scale=scale, sigma=sigma, min_size=min_size, channel_axis=2)
    return relabel_contiguous(labels.astype(np.int64) + 1)


def _sam_segmenter(checkpoint: str, model_type: str):
    try:
        from segment_anything import SamAutomaticMaskGenerator, sam_model_registry
    except ImportError as exc:
        raise RuntimeError(
            "segment-anything is not installed; omit --sam-checkpoint to use "
            "the built-in classical segmenter"
        ) from exc
    sam = sam_model_registry[model_type](checkpoint=checkpoint)
    generator = SamAutomaticMaskGenerator(sam)

    def run(rgb: np.ndarray) -> np.ndarray:
        result = generator.generate((rgb * 255).astype(np.uint8))
        labels = np.zeros(rgb.shape[:2], dtype=np.int64)
        # Smallest masks last so fine structures win the overlap.
        for i, m in enumerate(
            sorted(result, key=lambda m: -int(m["area"])), start=1
        ):
            labels[m["segmentation"]] = i
        return relabel_contiguous(labels)

    return run


def export_masks(
    image_dir,
    out_dir,
    scale: float = 100.0,
    sigma: float = 0.8,
    min_size: int = 32,
    sam_checkpoint: str | None = None,
    sam_model_type: str = "vit_h",
) -> ExportManifest:
    """One 16-bit segment PNG per input image; per-image failures logged."""
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in _EXTS)
    if not images:
        raise RuntimeError(f"no rasters under {image_dir}")

    if sam_checkpoint:
        segment = _sam_segmenter(sam_checkpoint, sam_model_type)
        segmenter_name = f"sam:{sam_model_type}"
    else:
        segment = lambda rgb: segment_classical(rgb, scale=scale, sigma=sigma, min_size=min_size)
        segmenter_name = "felzenszwalb"

    entries = []
    for path in images:
        out_path = out_dir / (path.stem + ".png")
        try:
            labels = segment(_load_rgb(path))
            count = int(labels.max())
            if count > 65535:
                raise RuntimeError(f"{count} segments exceed the 16-bit id range")
            iio.imwrite(out_path, labels.astype(np.uint16), extension=".png")
            entries.append(
                {
                    "input": str(path),
                    "output": str(out_path),
                    "segments": count,
                    "checksum": sha256_of(out_path),
                }
            )
        except Exception as exc:
            log.warning("skipping %s: %s", path, exc)
            entries.append({"input": str(path), "error": f"{type(exc).__name__}: {exc}"})

    manifest = ExportManifest(
        source=str(image_dir),
        output=str(out_dir),
        kind="masks",
        params={
            "segmenter": segmenter_name,
            "scale": scale,
            "sigma": sigma,
            "min_size": min_size,
        },
        files=entries,
    )
    manifest.save(out_dir / "masks.manifest.json")
    return manifest
