"""Command line interface: detect, baseline, eval."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import baselines, pipeline
from .config import resolve_config
from .errors import ProtochangeError
from .raster_io import load_pair, save_mask


@click.group()
def main():
    """Prototype-guided unsupervised change detection for bi-temporal rasters."""


def _common_config(config, overrides) -> "pipeline.PipelineConfig":
    return resolve_config(config_path=config, overrides=overrides)


@main.command()
@click.option("--pre", "pre_path", required=True, type=click.Path(), help="Pre-event raster.")
@click.option("--post", "post_path", required=True, type=click.Path(), help="Post-event raster.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output mask path.")
@click.option("--report", "report_path", type=click.Path(), help="Write the run report JSON here.")
@click.option("--config", type=click.Path(), help="Flat key/value config file.")
@click.option("--backend", type=click.Choice(["deterministic", "neural"]), default=None)
@click.option("--backend-dim", type=int, default=None)
@click.option("--model", "model_path", type=click.Path(), default=None, help="TorchScript model file for the neural backend.")
@click.option("--prototype", default=None, help="random | mask:PATH | chip:CHIP,MASK[,ROW,COL]")
@click.option("--prototype-source", type=click.Choice(["pre", "post"]), default=None)
@click.option("--seed", type=int, default=None, help="Root seed for all randomized stages.")
@click.option("--segments", default=None, help="builtin or a 16-bit PNG segment map.")
@click.option("--refine-threshold", type=float, default=None)
@click.option("--refine-source", type=click.Choice(["pre", "post", "both"]), default=None)
@click.option("--union-with-coarse", "refine_union_with_coarse", is_flag=True, default=None)
@click.option("--no-refine", "refine_enabled", flag_value=False, default=None, help="Skip segment refinement (coarse output).")
@click.option("--dump-intermediate", type=click.Path(), default=None, help="Dump projections/labels/coarse as flat binary + JSON header.")
@click.option("--timings", is_flag=True, default=False, help="Include volatile stage timings in the report file.")
def detect(pre_path, post_path, out_path, report_path, config, timings, **overrides):
    """Run the full prototype-guided pipeline on one pair."""
    cfg = _common_config(config, overrides)
    try:
        (mask, report), pair = pipeline.detect_from_paths(pre_path, post_path, cfg)
    except ProtochangeError as exc:
        raise click.ClickException(str(exc)) from exc
    save_mask(mask, out_path, geo=pair.pre.geo)
    if report_path:
        report.save(report_path, include_timings=timings)
    click.echo(
        f"wrote {out_path}: {mask.changed_count}/{mask.height * mask.width} changed pixels"
    )
    for stage, seconds in report.timings.items():
        click.echo(f"  {stage}: {seconds:.3f}s", err=True)


@main.command()
@click.option("--method", required=True, type=click.Choice(["cva", "pcakmeans", "irmad", "sfa"]))
@click.option("--pre", "pre_path", required=True, type=click.Path())
@click.option("--post", "post_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--score-out", type=click.Path(), help="Also write the score map (irmad/sfa) as .npy.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--block", type=int, default=4, show_default=True, help="pcakmeans block size.")
@click.option("--comps", type=int, default=3, show_default=True, help="pcakmeans PCA components.")
@click.option("--max-iter", type=int, default=30, show_default=True, help="irmad iteration cap.")
@click.option("--eps", type=float, default=1e-6, show_default=True, help="irmad convergence tolerance.")
@click.option("--ridge", type=float, default=1e-8, show_default=True)
@click.option("--percentile", type=float, default=0.99, show_default=True, help="chi-square no-change percentile (irmad/sfa).")
def baseline(method, pre_path, post_path, out_path, score_out, seed, block, comps, max_iter, eps, ridge, percentile):
    """Run one classical baseline on one pair."""
    try:
        pair = load_pair(pre_path, post_path)
        score = None
        if method == "cva":
            mask = baselines.cva_baseline(pair)
        elif method == "pcakmeans":
            mask = baselines.pca_kmeans_baseline(pair, block=block, comps=comps, seed=seed)
        elif method == "irmad":
            score, mask = baselines.irmad_baseline(
                pair, max_iter=max_iter, eps=eps, ridge=ridge, percentile=percentile
            )
        else:
            score, mask = baselines.sfa_baseline(pair, ridge=ridge, percentile=percentile)
    except ProtochangeError as exc:
        raise click.ClickException(str(exc)) from exc
    save_mask(mask, out_path, geo=pair.pre.geo)
    if score_out and score is not None:
        import numpy as np

        np.save(score_out, score.scores)
    click.echo(f"wrote {out_path}: {mask.changed_count}/{mask.height * mask.width} changed pixels")


@main.command(name="eval")
@click.option("--root", required=True, type=click.Path(), help="Dataset root with A/, B/, label/.")
@click.option(
    "--method",
    "methods",
    required=True,
    multiple=True,
    type=click.Choice(list(pipeline.METHODS)),
    help="Repeatable; each method adds a table row.",
)
@click.option("--out-dir", type=click.Path(), help="Write per-sample masks under this directory.")
@click.option("--report", "report_path", type=click.Path(), help="Write the full JSON report here.")
@click.option("--config", type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--backend", type=click.Choice(["deterministic", "neural"]), default=None)
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--segments", default=None)
def eval_cmd(root, methods, out_dir, report_path, config, **overrides):
    """Evaluate methods over a labeled dataset and print a metrics table."""
    cfg = _common_config(config, overrides)
    try:
        report = pipeline.evaluate(root, list(methods), cfg, out_dir=out_dir)
    except ProtochangeError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(report.table)
    failures = {m: r["failed"] for m, r in report.methods.items() if r["failed"]}
    if failures:
        click.echo(json.dumps({"failed": failures}, indent=2), err=True)
    if report_path:
        Path(report_path).write_text(report.to_json() + "\n")


if __name__ == "__main__":
    sys.exit(main())
