"""Kernel backend selection.

The compiled extension is used when importable; setting ``TRIFUSE_PURE_PYTHON=1``
forces the numpy fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load() -> tuple[ModuleType, str]:
    if os.environ.get("TRIFUSE_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels, "python"
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return _pykernels, "python"
    return _kernels, "cython"


kernels, BACKEND = _load()


def get(name: str) -> ModuleType:
    """Return a specific backend by name (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _kernels  # type: ignore[attr-defined]
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
