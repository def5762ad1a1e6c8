"""Kernel backend selection.

The compiled extension is used when it imports; ``HOMLAB_PURE_PYTHON=1``
forces the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("HOMLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py
else:
    _impl = _kernels_py

apply_diag = _impl.apply_diag
pcg_diag = _impl.pcg_diag
