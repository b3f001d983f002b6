"""Kernel backend selection: compiled extension when built, numpy otherwise.

The environment variable DYNASPLAT_KERNELS ("compiled" or "python") overrides
the automatic choice.
"""
import os

from . import _kernels_py
from .errors import InvalidParameterError

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def active_backend() -> str:
    forced = os.environ.get("DYNASPLAT_KERNELS", "").strip().lower()
    if forced:
        if forced not in ("compiled", "python"):
            raise InvalidParameterError(f"DYNASPLAT_KERNELS={forced!r} (expected 'compiled' or 'python')")
        if forced == "compiled" and _compiled is None:
            raise InvalidParameterError("DYNASPLAT_KERNELS=compiled but the extension is not built")
        return forced
    return "compiled" if _compiled is not None else "python"


def get_kernels(name: str | None = None):
    if name is None or name == "auto":
        name = active_backend()
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise InvalidParameterError("compiled kernels requested but the extension is not built")
        return _compiled
    raise InvalidParameterError(f"unknown kernel backend {name!r}")
