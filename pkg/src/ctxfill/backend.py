"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist:

* ``numba`` -- scalar loops compiled with ``@njit`` (default when numba imports)
* ``numpy`` -- pure-numpy fallback with identical accumulation order

Selection order: ``set_backend()`` override, then the ``CTXFILL_BACKEND``
environment variable, then numba if available.  Forward kernels of both
backends are bit-identical by construction, so switching backends never
changes results, only speed.
"""

import os

_VALID = ("numba", "numpy")
_override: str | None = None

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def set_backend(name: str | None) -> None:
    """Force a backend ("numba" or "numpy"), or None to restore env/default."""
    global _override
    if name is not None:
        if name not in _VALID:
            raise ValueError(f"unknown backend {name!r}, expected one of {_VALID}")
        if name == "numba" and not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
    _override = name


def backend_name() -> str:
    if _override is not None:
        return _override
    env = os.environ.get("CTXFILL_BACKEND", "").strip().lower()
    if env:
        if env not in _VALID:
            raise ValueError(f"CTXFILL_BACKEND={env!r} not recognized, expected one of {_VALID}")
        if env == "numba" and not HAS_NUMBA:
            return "numpy"
        return env
    return "numba" if HAS_NUMBA else "numpy"


def use_numba() -> bool:
    return backend_name() == "numba"
