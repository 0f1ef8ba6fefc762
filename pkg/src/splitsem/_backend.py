"""Kernel backend selection.

Hot numeric kernels exist twice: a pure-numpy reference and a numba
``@njit`` twin.  The active backend is chosen once at import from the
``SPLITSEM_BACKEND`` environment variable:

    SPLITSEM_BACKEND=numba   force numba (error if numba missing)
    SPLITSEM_BACKEND=numpy   force the pure-numpy path
    unset / "auto"           numba when importable, numpy otherwise

``use_backend()`` overrides the choice inside a ``with`` block; the
parity tests and the benchmark use it to pit both paths against each
other in one process.
"""

from __future__ import annotations

import contextlib
import os

from .errors import ConfigError

_ENV_VAR = "SPLITSEM_BACKEND"

try:
    import numba  # noqa: F401

    _NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    _NUMBA_AVAILABLE = False


def _resolve(name: str) -> str:
    name = name.strip().lower() or "auto"
    if name == "auto":
        return "numba" if _NUMBA_AVAILABLE else "numpy"
    if name == "numba":
        if not _NUMBA_AVAILABLE:
            raise ConfigError("SPLITSEM_BACKEND=numba but numba is not importable")
        return "numba"
    if name == "numpy":
        return "numpy"
    raise ConfigError(f"unknown backend {name!r}; expected auto, numba, or numpy")


_active = _resolve(os.environ.get(_ENV_VAR, "auto"))


def numba_available() -> bool:
    return _NUMBA_AVAILABLE


def active_backend() -> str:
    """Currently selected backend name: 'numba' or 'numpy'."""
    return _active


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch the kernel backend (tests and benchmarks)."""
    global _active
    previous = _active
    _active = _resolve(name)
    try:
        yield
    finally:
        _active = previous
