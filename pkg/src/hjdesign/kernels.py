"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting the environment
variable ``HJDESIGN_PURE_PYTHON=1`` forces the numpy fallback.  Both
backends expose the same functions with the same semantics.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

NAMES = (
    "minplus_1d",
    "minplus_2d",
    "semilag_1d",
    "semilag_2d",
    "hildreth_sweep_1d",
    "hildreth_sweep_2d",
)


def get_backend(name: str | None = None):
    """Return the kernel module called ``name`` (``"compiled"`` or ``"python"``)."""
    if name is None:
        return _compiled if (_compiled is not None and not _forced_python()) else _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    if name == "python":
        return _fallback
    raise ValueError(f"unknown backend {name!r}")


def _forced_python() -> bool:
    return os.environ.get("HJDESIGN_PURE_PYTHON", "") not in ("", "0")


_active = get_backend()
BACKEND = "compiled" if _active is _compiled else "python"

minplus_1d = _active.minplus_1d
minplus_2d = _active.minplus_2d
semilag_1d = _active.semilag_1d
semilag_2d = _active.semilag_2d
hildreth_sweep_1d = _active.hildreth_sweep_1d
hildreth_sweep_2d = _active.hildreth_sweep_2d
