"""Backend selection for the assignment kernels.

``LTW2_BACKEND`` picks the implementation: ``auto`` (default) uses the
compiled extension when it imports and falls back to pure Python otherwise,
``compiled`` requires the extension, ``python`` forces the fallback.
"""
import os

from . import _core_py

_choice = os.environ.get("LTW2_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"LTW2_BACKEND must be auto, compiled or python, got {_choice!r}")

_impl = _core_py
if _choice != "python":
    try:
        from . import _core as _impl
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _core_py

BACKEND = "compiled" if _impl is not _core_py else "python"
lsa = _impl.lsa
group_plans = _impl.group_plans
