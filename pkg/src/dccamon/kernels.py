"""Backend selection for the hot kernels.

The compiled extension is used when it was built; setting ``DCCAMON_PURE_PYTHON=1``
forces the numpy fallback (used by the parity tests and the benchmark).
"""
import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("DCCAMON_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

jacobi_eigh_batch = _impl.jacobi_eigh_batch
nearest_indices = _impl.nearest_indices

__all__ = ["BACKEND", "jacobi_eigh_batch", "nearest_indices"]
