"""Backend selection for the hot kernels.

``PPDE_NUMBA=0`` forces the pure-numpy path; anything else uses numba when it
imports. ``PPDE_THREADS`` caps the numba thread pool. Every kernel is
elementwise over nodes, so the thread count never changes results.
"""

from __future__ import annotations

import os
import warnings

# old system TBB: numba falls back to another threading layer, which is fine
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None

_state = {"backend": "numpy"}


def _env_backend() -> str:
    flag = os.environ.get("PPDE_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off") or not NUMBA_AVAILABLE:
        return "numpy"
    return "numba"


def _apply_threads() -> None:
    if not NUMBA_AVAILABLE:
        return
    raw = os.environ.get("PPDE_THREADS")
    if not raw:
        return
    try:
        wanted = int(raw)
    except ValueError:
        return
    numba.set_num_threads(max(1, min(wanted, numba.config.NUMBA_NUM_THREADS)))


def get_backend() -> str:
    return _state["backend"]


def set_backend(name: str) -> None:
    """Switch kernels between ``"numba"`` and ``"numpy"`` at runtime."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    _state["backend"] = name


_state["backend"] = _env_backend()
_apply_threads()
