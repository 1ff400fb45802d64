"""Pipeline configuration: defaults, flat key/value config files, CLI overrides.

Precedence is defaults < config file < explicit overrides. The config file is
flat INI-style key = value text; a [protochange] section header is optional.
PROTOCHANGE_CONFIG names a default file applied when --config is absent.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import MissingFile

CONFIG_ENV = "PROTOCHANGE_CONFIG"
_SECTION = "protochange"


@dataclass
class PipelineConfig:
    backend: str = "deterministic"  # deterministic | neural
    backend_dim: int = 16
    model_path: str | None = None
    prototype: str = "random"  # random | mask:PATH | chip:CHIP,MASK[,ROW,COL]
    prototype_source: str = "pre"  # pre | post
    proto_coverage: float = 0.5
    pca_components: int = 1
    k: int = 2
    seed: int = 0
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    refine_enabled: bool = True
    refine_threshold: float = 0.7
    refine_source: str = "pre"  # pre | post | both
    refine_union_with_coarse: bool = False
    segments: str = "builtin"  # builtin | path to 16-bit PNG
    quant_levels: int = 8
    min_segment_size: int = 32
    dump_intermediate: str | None = None
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown config key '{key}'")
            kwargs[key] = _coerce(raw, known[key].type)
        return cls(**kwargs)


def _coerce(raw, type_name):
    if raw is None or not isinstance(raw, str):
        return raw
    text = raw.strip()
    if type_name in ("int",):
        return int(text)
    if type_name in ("float",):
        return float(text)
    if type_name in ("bool",):
        return text.lower() in ("1", "true", "yes", "on")
    if type_name in ("str | None",):
        return None if text.lower() in ("", "none") else text
    return text


def load_config_file(path) -> dict:
    """Parse a flat key/value file; section headers optional."""
    p = Path(path)
    if not p.exists():
        raise MissingFile(str(p))
    text = p.read_text()
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = f"[{_SECTION}]\n" + text
    parser.read_string(text)
    values: dict = {}
    for section in parser.sections():
        values.update(dict(parser.items(section)))
    return values


def resolve_config(config_path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then file (explicit path or PROTOCHANGE_CONFIG), then overrides."""
    values: dict = {}
    path = config_path or os.environ.get(CONFIG_ENV)
    if path:
        values.update(load_config_file(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(values)
