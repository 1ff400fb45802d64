"""Hot-kernel dispatch: numba when available, pure numpy otherwise.

Set PROTOCHANGE_DISABLE_NUMBA=1 to force the numpy path. The active path is
fixed at import time so a run never mixes implementations.
"""
import os

_disable = os.environ.get("PROTOCHANGE_DISABLE_NUMBA", "").strip().lower()
if _disable in {"1", "true", "yes", "on"}:
    from . import _numpy as _impl
else:
    try:
        from . import _numba as _impl
    except ImportError:
        from . import _numpy as _impl

KERNEL_BACKEND = _impl.KERNEL_BACKEND
kmeans_assign = _impl.kmeans_assign
kmeans_update = _impl.kmeans_update
point_sq_dists = _impl.point_sq_dists
label_components = _impl.label_components
overlap_counts = _impl.overlap_counts
block_project = _impl.block_project

from ._numpy import relabel_first_appearance  # noqa: E402  (not dispatched)


def backend_name() -> str:
    return KERNEL_BACKEND
