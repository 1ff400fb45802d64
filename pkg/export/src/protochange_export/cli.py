"""Command line interface for the export tooling."""
from __future__ import annotations

import sys

import click

from .embedder import ExportError, export_embedder
from .masks import export_masks


@click.group()
def main():
    """Convert public checkpoints into protochange's portable file formats."""


@main.command()
@click.option(
    "--checkpoint",
    required=True,
    help="Public id (dinov2_vitl14), a local .pth state dict, or 'random'.",
)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--depth", type=int, default=None, help="Block count override (random checkpoints only).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--no-probe", "probe", flag_value=False, default=True, help="Skip the shape probe after scripting.")
def embedder(checkpoint, out_path, depth, seed, probe):
    """Emit a TorchScript patch embedder plus its manifest."""
    try:
        manifest = export_embedder(checkpoint, out_path, depth=depth, probe=probe, seed=seed)
    except ExportError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {manifest.output} (dim {manifest.token_dim}, depth {manifest.depth})")
    click.echo(f"sha256 {manifest.checksum}")


@main.command()
@click.option("--images", "image_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--scale", type=float, default=100.0, show_default=True)
@click.option("--sigma", type=float, default=0.8, show_default=True)
@click.option("--min-size", type=int, default=32, show_default=True)
@click.option("--sam-checkpoint", type=click.Path(), default=None, help="SAM weights; omit to use the classical segmenter.")
@click.option("--sam-model-type", default="vit_h", show_default=True)
def masks(image_dir, out_dir, scale, sigma, min_size, sam_checkpoint, sam_model_type):
    """Precompute 16-bit segment PNGs for every raster in a directory."""
    try:
        manifest = export_masks(
            image_dir,
            out_dir,
            scale=scale,
            sigma=sigma,
            min_size=min_size,
            sam_checkpoint=sam_checkpoint,
            sam_model_type=sam_model_type,
        )
    except RuntimeError as exc:
        raise click.ClickException(str(exc)) from exc
    done = [e for e in manifest.files if "error" not in e]
    failed = [e for e in manifest.files if "error" in e]
    click.echo(f"wrote {len(done)} segment maps to {manifest.output}")
    for entry in failed:
        click.echo(f"failed: {entry['input']}: {entry['error']}", err=True)


if __name__ == "__main__":
    sys.exit(main())
