"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``COMBOITR_PURE=1`` to force the numpy implementations.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("COMBOITR_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

bspline_basis = _impl.bspline_basis
mckp_dp = _impl.mckp_dp

__all__ = ["BACKEND", "bspline_basis", "mckp_dp"]
