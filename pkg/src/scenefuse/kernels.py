"""Kernel backend selection.

Imports the compiled extension when it was built, otherwise falls back to
the numpy lane. ``SCENEFUSE_PURE_PYTHON=1`` forces the fallback, which is
how the benchmark and the parity tests pin a lane.
"""

import os

from . import _kernels_py

if os.environ.get("SCENEFUSE_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

gap_pool = _impl.gap_pool
threshold_scale = _impl.threshold_scale
logistic_terms = _impl.logistic_terms
