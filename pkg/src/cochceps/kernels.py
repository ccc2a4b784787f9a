"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``COCHCEPS_PURE_PYTHON=1``
to force the numpy fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:
    from . import _kernels as _compiled  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["cython"] = _compiled

if _compiled is not None and not os.environ.get("COCHCEPS_PURE_PYTHON"):
    BACKEND = "cython"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _kernels_py

lift_rows = _impl.lift_rows
mode_energies = _impl.mode_energies
nt_xent = _impl.nt_xent
resize_nearest = _impl.resize_nearest
