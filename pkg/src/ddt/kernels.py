"""Convolution kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set ``DDT_PURE_PYTHON=1``
to force the numpy path. ``BACKEND`` names the active one.
"""
import os

from . import _kernels_py

BACKEND = "python"
im2col = _kernels_py.im2col
col2im = _kernels_py.col2im
out_size = _kernels_py.out_size

if not os.environ.get("DDT_PURE_PYTHON"):
    try:
        from . import _kernels_c
    except ImportError:  # extension not built
        _kernels_c = None
    if _kernels_c is not None:
        BACKEND = "cython"
        im2col = _kernels_c.im2col
        col2im = _kernels_c.col2im


def available_backends():
    """Map backend name to its module, for benchmarks and parity tests."""
    backends = {"python": _kernels_py}
    try:
        from . import _kernels_c as ext
    except ImportError:
        return backends
    backends["cython"] = ext
    return backends
