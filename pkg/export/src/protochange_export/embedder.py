"""Convert a ViT embedding checkpoint into the portable TorchScript file.

Checkpoint sources:

* a local ``.pth`` state dict in DINOv2 format,
* a known public id (``dinov2_vitl14``), downloaded on demand,
* ``random`` for a reduced, randomly initialized model with the same I/O
  contract (contract tests and offline smoke runs).

The emitted file maps a (1, bands, H, W) float image in [0, 1] (H, W multiples
of 14) to (1, (H/14)*(W/14), dim) patch tokens; normalization is baked in.
"""
from __future__ import annotations

from pathlib import Path

import torch

from .manifest import ExportManifest, sha256_of, state_dict_checksum
from .vit import PatchTokenizer, load_dinov2_state_dict

_PUBLIC_CHECKPOINTS = {
    "dinov2_vitl14": {
        "url": "https://dl.fbaipublicfiles.com/dinov2/dinov2_vitl14/dinov2_vitl14_pretrain.pth",
        "dim": 1024,
        "depth": 24,
        "heads": 16,
    },
}

_DEFAULTS = {"dim": 1024, "depth": 24, "heads": 16}


class ExportError(RuntimeError):
    pass


def _resolve_state(checkpoint: str):
    """Return (state_dict_or_None, architecture dict, source label)."""
    if checkpoint == "random":
        return None, dict(_DEFAULTS), "random"
    if checkpoint in _PUBLIC_CHECKPOINTS:
        spec = _PUBLIC_CHECKPOINTS[checkpoint]
        try:
            state = torch.hub.load_state_dict_from_url(spec["url"], map_location="cpu")
        except Exception as exc:
            raise ExportError(
                f"could not download '{checkpoint}' from {spec['url']}: {exc}. "
                f"Download the file on a connected machine and pass its local "
                f"path as --checkpoint instead."
            ) from exc
        return state, {k: spec[k] for k in ("dim", "depth", "heads")}, checkpoint
    path = Path(checkpoint)
    if not path.exists():
        raise ExportError(
            f"checkpoint '{checkpoint}' is neither a known public id "
            f"({', '.join(_PUBLIC_CHECKPOINTS)}), 'random', nor an existing file"
        )
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ExportError(f"cannot read state dict from {path}: {exc}") from exc
    if isinstance(state, dict) and "teacher" in state:
        state = state["teacher"]
    arch = dict(_DEFAULTS)
    if "pos_embed" in state:
        arch["dim"] = state["pos_embed"].shape[2]
        arch["depth"] = max(
            int(k.split(".")[1]) for k in state if k.startswith("blocks.")
        ) + 1
    return state, arch, str(path)


def build_tokenizer(checkpoint: str, depth: int | None = None, seed: int = 0) -> tuple[PatchTokenizer, dict, str]:
    state, arch, source = _resolve_state(checkpoint)
    if depth is not None:
        if state is not None:
            raise ExportError("--depth override is only valid with --checkpoint random")
        arch["depth"] = depth
    torch.manual_seed(seed)
    model = PatchTokenizer(dim=arch["dim"], depth=arch["depth"], num_heads=arch["heads"])
    if state is not None:
        load_dinov2_state_dict(model, state)
    model.eval()
    return model, arch, source


def export_embedder(
    checkpoint: str,
    out_path,
    depth: int | None = None,
    probe: bool = True,
    seed: int = 0,
) -> ExportManifest:
    """Emit the TorchScript embedder plus a manifest next to it."""
    model, arch, source = build_tokenizer(checkpoint, depth=depth, seed=seed)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        scripted = torch.jit.script(model)
    except Exception as exc:
        raise ExportError(f"TorchScript conversion failed: {exc}") from exc
    if probe:
        with torch.no_grad():
            tokens = scripted(torch.rand(1, 3, 56, 70))
        expected = (1, (56 // 14) * (70 // 14), arch["dim"])
        if tuple(tokens.shape) != expected or not torch.isfinite(tokens).all():
            raise ExportError(f"probe produced {tuple(tokens.shape)}, expected {expected}")
    scripted.save(str(out_path))
    manifest = ExportManifest(
        source=source,
        output=str(out_path),
        kind="embedder",
        checksum=sha256_of(out_path),
        content_checksum=state_dict_checksum(scripted),
        token_dim=arch["dim"],
        patch=14,
        depth=arch["depth"],
        input_contract=(
            "float32 (1, 3, H, W) in [0,1], H and W multiples of 14 -> "
            f"float32 (1, (H/14)*(W/14), {arch['dim']}) patch tokens"
        ),
        params={"heads": arch["heads"], "seed": seed},
    )
    manifest.save(out_path.with_suffix(out_path.suffix + ".manifest.json"))
    return manifest
