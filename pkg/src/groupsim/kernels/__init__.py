"""Numeric hot-path kernels with a compiled core and a NumPy fallback.

The compiled extension (``groupsim.kernels._native``, built from Cython) is
preferred when importable; set ``GROUPSIM_PURE_PYTHON=1`` to force the
fallback. Both backends implement the same operations in the same order, so
results do not depend on which one is active.
"""

from __future__ import annotations

import os

from . import pure

if os.environ.get("GROUPSIM_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = pure
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = pure

BACKEND: str = _impl.BACKEND
pairwise_sqdist = _impl.pairwise_sqdist
scan_split_level = _impl.scan_split_level

__all__ = ["BACKEND", "pairwise_sqdist", "scan_split_level", "pure"]
