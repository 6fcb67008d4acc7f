"""Select the compiled simulator kernels, falling back to numpy.

Set ``DEEPSETQ_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

fallback = _fallback

if os.environ.get("DEEPSETQ_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

_active = compiled if compiled is not None else _fallback
BACKEND = "compiled" if compiled is not None else "python"

lane_leaders = _active.lane_leaders
lane_neighbors = _active.lane_neighbors
rule_based_choice = _active.rule_based_choice
rule_based_decisions = _active.rule_based_decisions


def get_backend(name: str | None = None):
    """Kernel module by name: ``"compiled"``, ``"python"`` or ``None`` for the active one."""
    if name is None:
        return _active
    if name == "python":
        return _fallback
    if name == "compiled":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown backend {name!r}")
