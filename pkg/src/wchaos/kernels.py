"""Kernel backend selection.

The propagator's hot loops live in `_kernels_numba` (default) with a
pure-numpy twin in `_kernels_numpy`.  Set WCHAOS_DISABLE_NUMBA=1 to force
the numpy path; if numba is unavailable the fallback is automatic.
"""

import os
import warnings

from . import _kernels_numpy

_DISABLE = os.environ.get("WCHAOS_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

if _DISABLE:
    _impl = _kernels_numpy
else:
    try:
        from . import _kernels_numba as _impl
    except ImportError as exc:  # pragma: no cover
        warnings.warn(f"numba unavailable ({exc}); using pure-numpy kernels")
        _impl = _kernels_numpy


def active_backend() -> str:
    return _impl.BACKEND_NAME


def get_impl(name: str = None):
    """Return a kernel module by name ('numba', 'numpy', or None = active)."""
    if name is None:
        return _impl
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    raise ValueError(f"unknown kernel backend {name!r}")


def set_num_threads(n: int):
    """Cap kernel parallelism; no-op on the numpy path."""
    if _impl.BACKEND_NAME == "numba":
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
