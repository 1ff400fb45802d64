"""End-to-end orchestration: detect, evaluate, and reproducible run reports.

The detect pipeline resizes the pair to a patch multiple, synthesizes the
prototype-composited images, extracts four feature maps, clusters the
concatenated difference vectors, picks the change cluster by prototype vote,
and refines the upsampled coarse mask with object segments. All randomness
flows from one root seed, split deterministically per stage so identical
configs give byte-identical outputs.
"""
from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, baselines, cva, features, metrics, prototype, refinement
from .config import PipelineConfig
from .errors import (
    EmptyDataset,
    MissingFile,
    PipelineStageError,
    ProtochangeError,
)
from .raster_io import (
    ChangeMask,
    ImagePair,
    load_dataset,
    load_image,
    load_mask,
    resize_mask_nearest,
    resize_to_patch_multiple,
    save_mask,
)

_DEGENERATE_EPS = 1e-30

METHODS = ("pucd", "pucd-nosam", "cva", "pcakmeans", "irmad", "sfa")


def derive_seed(root_seed: int, label: str) -> int:
    """Stable per-stage/per-sample seed split, independent of platform."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


@dataclass
class RunReport:
    config: dict
    prototype: dict = field(default_factory=dict)
    degenerate: bool = False
    pca: dict = field(default_factory=dict)
    kmeans: dict = field(default_factory=dict)
    vote: dict = field(default_factory=dict)
    coarse: dict = field(default_factory=dict)
    refinement: dict = field(default_factory=dict)
    mask: dict = field(default_factory=dict)
    metrics: dict | None = None
    kernel_backend: str = ""
    timings: dict = field(default_factory=dict)

    def to_json(self, include_timings: bool = False) -> str:
        """Canonical serialization. Timings are volatile and excluded by
        default so reports from identical runs are byte-identical."""
        payload = {
            "config": self.config,
            "prototype": self.prototype,
            "degenerate": self.degenerate,
            "pca": self.pca,
            "kmeans": self.kmeans,
            "vote": self.vote,
            "coarse": self.coarse,
            "refinement": self.refinement,
            "mask": self.mask,
            "metrics": self.metrics,
            "kernel_backend": self.kernel_backend,
        }
        if include_timings:
            payload["timings"] = self.timings
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path, include_timings: bool = False) -> None:
        Path(path).write_text(self.to_json(include_timings=include_timings) + "\n")


class _StageTimer:
    def __init__(self, report: RunReport):
        self.report = report

    def run(self, stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except ProtochangeError as exc:
            raise PipelineStageError(stage, exc) from exc
        self.report.timings[stage] = self.report.timings.get(stage, 0.0) + (
            time.perf_counter() - start
        )
        return result


def _resolve_prototype(
    resized: ImagePair, original: ImagePair, config: PipelineConfig
) -> prototype.Prototype:
    choice = config.prototype
    source_img = resized.pre if config.prototype_source == "pre" else resized.post
    if choice == "random":
        segs = refinement.builtin_segments(
            source_img, config.quant_levels, config.min_segment_size
        )
        return prototype.select_prototype_random(
            segs,
            source_img,
            seed=derive_seed(config.seed, "prototype"),
            source=config.prototype_source,
        )
    if choice.startswith("mask:"):
        mask = load_mask(choice[5:])
        if mask.values.shape != (original.height, original.width):
            raise PipelineStageError(
                "prototype",
                ProtochangeError(
                    f"prototype mask {mask.values.shape} vs scene "
                    f"{(original.height, original.width)}"
                ),
            )
        values = resize_mask_nearest(mask.values, resized.height, resized.width)
        return prototype.select_prototype_manual(
            source_img, values, source=config.prototype_source
        )
    if choice.startswith("chip:"):
        parts = choice[5:].split(",")
        if len(parts) not in (2, 4):
            raise ValueError(f"bad chip prototype value '{choice}'")
        chip = load_image(parts[0])
        chip_mask = load_mask(parts[1]).values
        proto = prototype.Prototype(
            chip=chip, mask=chip_mask, anchor=(0, 0), source="external"
        )
        if len(parts) == 4:
            sy = resized.height / original.height
            sx = resized.width / original.width
            anchor = (int(round(int(parts[2]) * sy)), int(round(int(parts[3]) * sx)))
        else:
            anchor = prototype.center_anchor(proto, resized.height, resized.width)
        proto.anchor = anchor
        return proto
    raise ValueError(f"unknown prototype value '{choice}'")


def _segment_sources(original: ImagePair, config: PipelineConfig) -> list[refinement.SegmentMap]:
    if config.segments != "builtin":
        seg = refinement.load_segments(
            config.segments, expected_shape=(original.height, original.width)
        )
        return [seg]
    sources = {
        "pre": [original.pre],
        "post": [original.post],
        "both": [original.pre, original.post],
    }[config.refine_source]
    return [
        refinement.builtin_segments(img, config.quant_levels, config.min_segment_size)
        for img in sources
    ]


def _dump(directory: str, name: str, arr: np.ndarray) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(arr)
    (out / f"{name}.bin").write_bytes(data.tobytes())
    (out / f"{name}.json").write_text(
        json.dumps(
            {"dtype": str(data.dtype), "shape": list(data.shape), "order": "C"},
            sort_keys=True,
        )
        + "\n"
    )


def detect(pair: ImagePair, config: PipelineConfig) -> tuple[ChangeMask, RunReport]:
    """Run the full prototype-guided detection pipeline on one pair.

    The returned mask is at the original pair resolution; internal processing
    happens at the nearest patch-multiple size.
    """
    report = RunReport(config=config.to_dict(), kernel_backend=_kernels.backend_name())
    timer = _StageTimer(report)

    backend = features.FeatureBackend(
        kind=config.backend, dim=config.backend_dim, model_path=config.model_path
    )
    timer.run("backend", backend.validate_loadable)

    resized_pre = timer.run("resize", resize_to_patch_multiple, pair.pre)
    resized_post = timer.run("resize", resize_to_patch_multiple, pair.post)
    resized = ImagePair(resized_pre, resized_post)

    proto = timer.run("prototype", _resolve_prototype, resized, pair, config)
    report.prototype = {
        "source": proto.source,
        "anchor": list(proto.anchor),
        "chip_height": proto.chip.height,
        "chip_width": proto.chip.width,
        "segment_id": proto.segment_id,
        "seed": derive_seed(config.seed, "prototype") if config.prototype == "random" else None,
    }

    synth = timer.run("synthesize", prototype.synthesize_pair, resized, proto)

    f_pre = timer.run("features", features.extract_features, resized.pre, backend)
    f_post = timer.run("features", features.extract_features, resized.post, backend)
    f_spre = timer.run("features", features.extract_features, synth.synth_pre, backend)
    f_spost = timer.run("features", features.extract_features, synth.synth_post, backend)

    s21 = timer.run("differences", features.feature_difference, f_pre, f_post)
    s11 = timer.run("differences", features.feature_difference, f_pre, f_spre)
    s22 = timer.run("differences", features.feature_difference, f_post, f_spost)

    vectors = timer.run("vectors", cva.build_change_vectors, s21, s11, s22)
    grid = vectors.grid

    centered = vectors.data - vectors.data.mean(axis=0)
    if float((centered * centered).sum()) <= _DEGENERATE_EPS:
        # No-change contract: zero-variance change vectors mean nothing moved.
        report.degenerate = True
        coarse = cva.CoarseChangeMap(grid=grid, cells=np.zeros((grid.rows, grid.cols), dtype=bool))
        labels = None
    else:
        pca_model, proj = timer.run("pca", cva.pca_fit_transform, vectors.data, config.pca_components)
        report.pca = {
            "components": config.pca_components,
            "explained_variance": pca_model.explained_variance.tolist(),
        }
        km_seed = derive_seed(config.seed, "kmeans")
        km = timer.run(
            "kmeans",
            cva.kmeans,
            proj,
            config.k,
            km_seed,
            config.kmeans_max_iter,
            config.kmeans_tol,
        )
        report.kmeans = {
            "iterations": km.iterations,
            "inertia": km.inertia,
            "seed": km_seed,
        }
        cells = timer.run("assign", prototype.prototype_cells, proto, grid, config.proto_coverage)
        change_id = timer.run("assign", cva.assign_change_cluster, km.labels, cells, s21)
        report.vote = {
            "tally": {str(k): v for k, v in cva.vote_tally(km.labels, cells, grid).items()},
            "change_cluster": change_id,
            "prototype_cells": sorted(list(cells)),
        }
        coarse = cva.coarse_map(km.labels, change_id, grid)
        labels = km.labels
        if config.dump_intermediate:
            _dump(config.dump_intermediate, "projections", proj)
            _dump(config.dump_intermediate, "labels", labels)
            _dump(config.dump_intermediate, "coarse", coarse.cells)

    report.coarse = {
        "changed_cells": int(coarse.cells.sum()),
        "total_cells": int(grid.cells),
    }

    coarse_pixels = timer.run("upsample", cva.upsample, coarse)
    coarse_original = ChangeMask(
        resize_mask_nearest(coarse_pixels.values, pair.height, pair.width)
    )

    if config.refine_enabled:
        segment_maps = timer.run("segments", _segment_sources, pair, config)
        refined = np.zeros((pair.height, pair.width), dtype=bool)
        retained = []
        for seg in segment_maps:
            kept = refinement.retained_ids(coarse_original, seg, config.refine_threshold)
            retained.append({"segments": seg.count, "retained": kept})
            part = timer.run(
                "refine",
                refinement.refine,
                coarse_original,
                seg,
                config.refine_threshold,
                config.refine_union_with_coarse,
            )
            refined |= part.values
        final = ChangeMask(refined)
        report.refinement = {
            "enabled": True,
            "threshold": config.refine_threshold,
            "source": config.refine_source if config.segments == "builtin" else "file",
            "union_with_coarse": config.refine_union_with_coarse,
            "per_source": retained,
        }
    else:
        final = coarse_original
        report.refinement = {"enabled": False}

    report.mask = {
        "height": final.height,
        "width": final.width,
        "changed_pixels": final.changed_count,
        "total_pixels": final.height * final.width,
    }
    return final, report


def run_method(method: str, pair: ImagePair, config: PipelineConfig) -> tuple[ChangeMask, RunReport | None]:
    """Dispatch one named method on one pair."""
    if method == "pucd":
        return detect(pair, config)
    if method == "pucd-nosam":
        cfg = PipelineConfig.from_dict({**config.to_dict(), "refine_enabled": False})
        return detect(pair, cfg)
    if method == "cva":
        return baselines.cva_baseline(pair), None
    if method == "pcakmeans":
        return baselines.pca_kmeans_baseline(pair, seed=derive_seed(config.seed, "pcakmeans")), None
    if method == "irmad":
        return baselines.irmad_baseline(pair)[1], None
    if method == "sfa":
        return baselines.sfa_baseline(pair)[1], None
    raise ValueError(f"unknown method '{method}' (expected one of {METHODS})")


@dataclass
class EvalReport:
    methods: dict  # method -> {"aggregate": metrics, "samples": [...], "failed": [...]}
    table: str

    def to_json(self) -> str:
        return json.dumps({"methods": self.methods}, indent=2, sort_keys=True)


def evaluate(
    root,
    methods,
    config: PipelineConfig,
    out_dir=None,
) -> EvalReport:
    """Run methods over a labeled dataset and micro-aggregate the metrics.

    Per-sample failures are recorded and skipped, never fatal. Masks are
    written before metric computation so partial runs still leave artifacts.
    """
    if isinstance(methods, str):
        methods = [methods]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method '{m}' (expected one of {METHODS})")
    samples = load_dataset(root)
    unlabeled = [s.id for s in samples if s.label_path is None]
    if unlabeled:
        raise EmptyDataset(
            f"evaluation requires labels; missing for {len(unlabeled)} samples "
            f"(e.g. '{unlabeled[0]}')"
        )

    out_root = Path(out_dir) if out_dir else None
    results: dict = {}
    for method in methods:
        per_sample = []
        failed = []
        cms = []

        def run_one(sample):
            sample_cfg = PipelineConfig.from_dict(
                {**config.to_dict(), "seed": derive_seed(config.seed, f"sample:{sample.id}")}
            )
            pair = sample.pair
            mask, _ = run_method(method, pair, sample_cfg)
            if out_root is not None:
                method_dir = out_root / method
                method_dir.mkdir(parents=True, exist_ok=True)
                save_mask(mask, method_dir / f"{sample.id}.png")
            cm = metrics.confusion(mask, sample.label)
            return sample.id, cm

        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = {s.id: pool.submit(run_one, s) for s in samples}
                outcomes = []
                for sid, fut in futures.items():
                    try:
                        outcomes.append(fut.result())
                    except Exception as exc:
                        failed.append({"id": sid, "error": f"{type(exc).__name__}: {exc}"})
        else:
            outcomes = []
            for s in samples:
                try:
                    outcomes.append(run_one(s))
                except Exception as exc:
                    failed.append({"id": s.id, "error": f"{type(exc).__name__}: {exc}"})

        for sid, cm in sorted(outcomes):
            m = metrics.class_metrics(cm)
            per_sample.append(
                {
                    "id": sid,
                    "confusion": {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn},
                    "metrics": m,
                }
            )
            cms.append(cm)
        agg = metrics.aggregate(cms) if cms else None
        results[method] = {"aggregate": agg, "samples": per_sample, "failed": failed}

    table = metrics.format_table(
        {m: r["aggregate"] for m, r in results.items() if r["aggregate"] is not None}
    )
    return EvalReport(methods=results, table=table)


def detect_from_paths(pre_path, post_path, config: PipelineConfig):
    """Convenience wrapper used by the CLI."""
    if not Path(pre_path).exists():
        raise MissingFile(str(pre_path))
    if not Path(post_path).exists():
        raise MissingFile(str(post_path))
    pair = ImagePair(load_image(pre_path), load_image(post_path))
    return detect(pair, config), pair
