"""One-shot tooling that emits protochange's portable model and segment files."""

__version__ = "0.1.0"

from .embedder import export_embedder
from .manifest import ExportManifest
from .masks import export_masks

__all__ = ["ExportManifest", "export_embedder", "export_masks", "__version__"]
