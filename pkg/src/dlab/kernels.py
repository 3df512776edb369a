"""Hot-kernel dispatch: compiled Cython core if importable, numpy fallback otherwise.

Set ``DLAB_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

try:
    if os.environ.get("DLAB_PURE_PYTHON"):
        raise ImportError("pure-Python mode requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"
box_dp = _compiled.box_dp if _compiled is not None else _fallback.box_dp

IMPLEMENTATIONS = {"numpy": _fallback.box_dp}
if _compiled is not None:
    IMPLEMENTATIONS["cython"] = _compiled.box_dp
