"""Backend selection for the numpy-side hot loops.

The compiled extension is used when it was built; setting ``AFR_PURE_PYTHON=1``
forces the numpy fallback. ``BACKEND`` names the active one.
"""

import os

from afrclip import _kernels_py

if os.environ.get("AFR_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from afrclip import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

ranked_sweep = _impl.ranked_sweep
box_mean = _impl.box_mean
bilinear_align_corners = _impl.bilinear_align_corners

BACKENDS = {"python": _kernels_py}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl
