"""Pick the compiled kernels when available, else the NumPy fallback.

Set ``IOTFLOW_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if not os.environ.get("IOTFLOW_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"

NO_MATCH = _kernels_py.NO_MATCH


def get_kernels(name: str | None = None):
    """Return the kernel module for ``name`` ("cython", "python") or the active default."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
