"""Hot numeric kernels with two interchangeable backends.

``numba_kernels`` holds @njit scalar loops, ``numpy_kernels`` a pure-numpy
fallback.  Both follow the same per-output-element accumulation order (bias
first, then ascending reduction indices), which makes the forward kernels
bit-identical to each other and to a naive nested-loop evaluation.  Dispatch
happens per call via :mod:`ctxfill.backend`, so tests and benchmarks can flip
backends at runtime.
"""

from ctxfill import backend as _backend
from ctxfill.kernels import numpy_kernels as _np_impl

try:
    from ctxfill.kernels import numba_kernels as _nb_impl
except ImportError:  # pragma: no cover
    _nb_impl = None

_KERNELS = (
    "conv2d_forward",
    "conv2d_backward",
    "tconv2d_forward",
    "tconv2d_backward",
    "cwfc_forward",
    "cwfc_backward",
    "linear_forward",
    "linear_backward",
    "maxpool_forward",
    "maxpool_backward",
)


def _active():
    if _backend.use_numba() and _nb_impl is not None:
        return _nb_impl
    return _np_impl


def _make_dispatcher(name):
    def dispatch(*args):
        return getattr(_active(), name)(*args)

    dispatch.__name__ = name
    dispatch.__doc__ = getattr(_np_impl, name).__doc__
    return dispatch


for _name in _KERNELS:
    globals()[_name] = _make_dispatcher(_name)

del _name

__all__ = list(_KERNELS)
