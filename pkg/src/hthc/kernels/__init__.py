"""Numerical kernel backends.

The compiled extension runs the hot loops (column dots, gap-score sampling,
solver lanes, striped shared-vector updates) with the GIL released, so
worker threads execute truly in parallel. A numpy fallback with identical
semantics is selected when the extension is unavailable or the
HTHC_PURE_PYTHON environment variable is set to a non-empty value other
than "0".

Both backends expose the same module-level API; `get_backend` returns one
by name for side-by-side testing and benchmarking.
"""

from __future__ import annotations

import os

from hthc.kernels import pure


def _pure_forced() -> bool:
    return os.environ.get("HTHC_PURE_PYTHON", "0").lower() not in ("", "0", "false", "no")


try:
    from hthc.kernels import compiled
except ImportError:
    compiled = None

if compiled is not None and not _pure_forced():
    _default = compiled
else:
    _default = pure

backend_name: str = _default.NAME


def available_backends() -> list[str]:
    names = [pure.NAME]
    if compiled is not None:
        names.insert(0, compiled.NAME)
    return names


def get_backend(name=None):
    """Resolve a backend module from a name, a module, or None (default)."""
    if name is None:
        return _default
    if not isinstance(name, str):
        return name
    if name == pure.NAME:
        return pure
    if compiled is not None and name == compiled.NAME:
        return compiled
    raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")


def default_backend():
    return _default
