"""Backend switch for the hot numeric kernels.

Every kernel in the package exists twice: a numba ``@njit`` loop version and a
vectorised numpy version.  The numba path is used when numba imports and the
environment does not set ``RFSLOPE_DISABLE_NUMBA`` to a truthy value.
"""
from __future__ import annotations

import contextlib
import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

_TRUTHY = {"1", "true", "yes", "on"}

_state = {
    "numba": NUMBA_AVAILABLE
    and os.environ.get("RFSLOPE_DISABLE_NUMBA", "").strip().lower() not in _TRUTHY
}


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op when numba is missing."""
    kwargs.setdefault("cache", True)
    if NUMBA_AVAILABLE:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


def use_numba() -> bool:
    return _state["numba"]


def backend_name() -> str:
    return "numba" if _state["numba"] else "numpy"


def set_backend(name: str) -> None:
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    _state["numba"] = name == "numba"


@contextlib.contextmanager
def backend(name: str):
    """Temporarily switch kernels to ``"numba"`` or ``"numpy"``."""
    previous = backend_name()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
