"""Kernel backend selection.

Hot loops (split search, tree traversal, tree-Shapley recursion) exist in two
flavours: numba-compiled loops and a pure-numpy path. The numba path is used
when numba imports cleanly and ``CITEYE_DISABLE_NUMBA`` is unset or falsy.
"""

import os

_FALSY = ("", "0", "false", "no", "off")

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("CITEYE_DISABLE_NUMBA", "").lower() in _FALSY


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise the identity decorator.

    Compilation is independent of ``USE_NUMBA`` so both paths stay importable
    side by side (the benchmark and the backend-equivalence tests need that).
    """
    if not NUMBA_AVAILABLE:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def resolve_backend(backend=None):
    if backend is None:
        return "numba" if USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
