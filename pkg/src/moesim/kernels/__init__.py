"""Hot simulation kernels, compiled when available.

The Cython extension ``_ckernels`` is preferred; ``_pykernels`` is the
pure-Python fallback with identical semantics.  Set ``MOESIM_PURE_PYTHON=1``
to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MOESIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

lifetime_block_sum = _impl.lifetime_block_sum
decode_block_demand = _impl.decode_block_demand
iteration_timeline = _impl.iteration_timeline


def backends() -> dict:
    """All importable kernel implementations, keyed by name."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found


__all__ = [
    "BACKEND",
    "backends",
    "lifetime_block_sum",
    "decode_block_demand",
    "iteration_timeline",
]
