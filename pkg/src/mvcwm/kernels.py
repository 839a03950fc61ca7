"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``MVCWM_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementations are used.  ``BACKEND`` names the active
one.
"""
import os

from . import _pykernels

_force_python = os.environ.get("MVCWM_PURE_PYTHON", "") not in ("", "0")

if _force_python:
    _impl = _pykernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND
chol_inv_logdet = _impl.chol_inv_logdet
quad_trace = _impl.quad_trace
row_scatter = _impl.row_scatter
col_scatter = _impl.col_scatter
cross_moments = _impl.cross_moments

__all__ = [
    "BACKEND",
    "chol_inv_logdet",
    "quad_trace",
    "row_scatter",
    "col_scatter",
    "cross_moments",
]
