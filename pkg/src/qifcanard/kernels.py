"""Backend selection for the hot loops.

The compiled extension ``qifcanard._core`` is used when it imports; set
``QIFCANARD_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from qifcanard import _pycore

BACKENDS = {"python": _pycore}

try:
    from qifcanard import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None
else:
    BACKENDS["compiled"] = _core

if _core is not None and os.environ.get("QIFCANARD_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "compiled"
else:
    BACKEND = "python"


def get(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = BACKEND if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
