"""Export manifests: provenance, contract, and checksum for every artifact."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def state_dict_checksum(module) -> str:
    """Digest of the module's weights and buffer layout.

    TorchScript archives embed a per-save serialization id and hash-ordered
    attribute listings, so raw file bytes are not reproducible; the state
    dict is, and it is what provenance actually depends on.
    """
    digest = hashlib.sha256()
    state = module.state_dict()
    for key in sorted(state):
        tensor = state[key].detach().cpu().contiguous()
        digest.update(key.encode())
        digest.update(str(tensor.dtype).encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


@dataclass
class ExportManifest:
    source: str
    output: str
    kind: str  # embedder | masks
    checksum: str = ""  # raw file integrity
    content_checksum: str = ""  # weights digest; stable across re-exports
    token_dim: int | None = None
    patch: int | None = None
    depth: int | None = None
    input_contract: str | None = None
    params: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ExportManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify_checksum(self) -> bool:
        return bool(self.checksum) and sha256_of(self.output) == self.checksum
