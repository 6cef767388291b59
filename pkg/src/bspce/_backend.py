"""
Selects the numerical kernel backend at import time.

The compiled ``_core`` extension is used when it imports; otherwise, or when
the environment variable ``BSPCE_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementation in ``_core_py`` is used.
"""

import importlib
import os

from . import _core_py

__all__ = ["core", "BACKEND", "get_core", "available_backends"]


def _load_compiled():
    try:
        return importlib.import_module("bspce._core")
    except ImportError:
        return None


_compiled = _load_compiled()
_force_python = os.environ.get("BSPCE_PURE_PYTHON", "") not in ("", "0")

core = _core_py if (_force_python or _compiled is None) else _compiled
BACKEND = core.BACKEND


def available_backends():
    """Names of importable backends, compiled first."""
    return (["cython"] if _compiled is not None else []) + ["python"]


def get_core(name=None):
    """Kernel module by name (``"cython"`` or ``"python"``); default is the active one."""
    if name is None:
        return core
    if name == "python":
        return _core_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled extension bspce._core is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
