"""Prototype selection and prototype-guided pair synthesis.

A prototype is one masked image chip representing the target of interest.
Synthesis composites the chip into both epochs at its anchor, so the
prototype-relative difference maps measure "prototype vs. current scene
content at the same location". A chip taken from an image and composited
back at its own anchor reproduces that image exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyMask, NoSegments, OutOfBounds
from .features import PatchGrid
from .raster_io import ImagePair, RasterImage


@dataclass
class Prototype:
    chip: RasterImage
    mask: np.ndarray  # bool, chip-sized
    anchor: tuple[int, int]  # (row, col) of chip origin in scene coordinates
    source: str = "pre"  # pre | post | external
    segment_id: int | None = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.chip.height, self.chip.width):
            raise DimensionMismatch(
                f"mask {self.mask.shape} vs chip "
                f"{(self.chip.height, self.chip.width)}"
            )
        if not self.mask.any():
            raise EmptyMask("prototype mask selects no pixels")


@dataclass
class SynthesizedPair:
    synth_pre: RasterImage
    synth_post: RasterImage


def select_prototype_manual(
    img: RasterImage,
    mask: np.ndarray,
    anchor: tuple[int, int] | None = None,
    source: str = "pre",
) -> Prototype:
    """Cut the mask's bounding box out of ``img`` as the prototype chip.

    ``anchor`` defaults to the chip's own location in ``img`` so that
    synthesis is an identity on the source image.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (img.height, img.width):
        raise OutOfBounds(f"mask {mask.shape} does not cover image {(img.height, img.width)}")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyMask("selection mask is empty")
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    chip = RasterImage(img.data[r0:r1, c0:c1].copy(), geo=None)
    chip_mask = mask[r0:r1, c0:c1].copy()
    return Prototype(
        chip=chip,
        mask=chip_mask,
        anchor=(r0, c0) if anchor is None else (int(anchor[0]), int(anchor[1])),
        source=source,
    )


def select_prototype_random(segments, source_img: RasterImage, seed: int, source: str = "pre") -> Prototype:
    """Uniformly pick one segment id and use it as the prototype mask."""
    n = segments.count
    if n < 1:
        raise NoSegments("segment map holds no segments")
    rng = np.random.default_rng(seed)
    seg_id = int(rng.integers(1, n + 1))
    proto = select_prototype_manual(source_img, segments.labels == seg_id, source=source)
    proto.segment_id = seg_id
    return proto


def center_anchor(proto: Prototype, scene_height: int, scene_width: int) -> tuple[int, int]:
    """Default placement for external chips: scene center."""
    return (
        max(0, (scene_height - proto.chip.height) // 2),
        max(0, (scene_width - proto.chip.width) // 2),
    )


def synthesize_pair(pair: ImagePair, proto: Prototype) -> SynthesizedPair:
    """Composite the prototype chip into both epochs at its anchor.

    Only pixels under the prototype mask are replaced; everything outside the
    footprint is untouched.
    """
    r0, c0 = proto.anchor
    r1, c1 = r0 + proto.chip.height, c0 + proto.chip.width
    if r0 < 0 or c0 < 0 or r1 > pair.height or c1 > pair.width:
        raise OutOfBounds(
            f"chip {proto.chip.height}x{proto.chip.width} at {proto.anchor} "
            f"exceeds scene {pair.height}x{pair.width}"
        )
    if proto.chip.bands != pair.bands:
        raise DimensionMismatch(
            f"chip has {proto.chip.bands} bands, scene has {pair.bands}"
        )

    def composite(img: RasterImage) -> RasterImage:
        out = img.data.copy()
        region = out[r0:r1, c0:c1]
        region[proto.mask] = proto.chip.data[proto.mask]
        return RasterImage(out, geo=img.geo)

    return SynthesizedPair(synth_pre=composite(pair.pre), synth_post=composite(pair.post))


def prototype_cells(proto: Prototype, grid: PatchGrid, coverage: float = 0.5) -> set[tuple[int, int]]:
    """Grid cells whose area overlaps the prototype footprint by more than ``coverage``."""
    m = grid.patch
    scene_h, scene_w = grid.rows * m, grid.cols * m
    r0, c0 = proto.anchor
    if r0 < 0 or c0 < 0 or r0 + proto.chip.height > scene_h or c0 + proto.chip.width > scene_w:
        raise OutOfBounds("prototype footprint outside the gridded scene")
    footprint = np.zeros((scene_h, scene_w), dtype=bool)
    footprint[r0 : r0 + proto.chip.height, c0 : c0 + proto.chip.width] = proto.mask
    per_cell = footprint.reshape(grid.rows, m, grid.cols, m).sum(axis=(1, 3))
    fraction = per_cell / float(m * m)
    rr, cc = np.nonzero(fraction > coverage)
    return {(int(r), int(c)) for r, c in zip(rr, cc)}
