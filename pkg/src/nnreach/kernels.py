"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise, or when
``NNREACH_PURE_PYTHON=1`` is set, the numpy fallback is used. ``BACKEND``
names the active one.
"""
import os

from . import _kernels_py

if os.environ.get("NNREACH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

mlp_forward = _impl.mlp_forward
interval_forward = _impl.interval_forward
crown_bounds = _impl.crown_bounds


def get_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
