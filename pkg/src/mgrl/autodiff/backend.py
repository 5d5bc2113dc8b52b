"""Kernel backend selection.

The compiled extension is preferred when importable; MGRL_BACKEND=python or
MGRL_BACKEND=compiled forces a choice. Selection only affects how primitive
forwards are evaluated — graph recording and derivative rules are shared.
"""

import os

from . import kernels_py

_BACKENDS = {"python": kernels_py.forward}

try:
    from . import _speedups

    _BACKENDS["compiled"] = _speedups.forward
except ImportError:
    _speedups = None

_forced = os.environ.get("MGRL_BACKEND")
if _forced is not None and _forced not in _BACKENDS:
    raise ImportError(
        f"MGRL_BACKEND={_forced!r} is not available; choices: {sorted(_BACKENDS)}"
    )

DEFAULT = _forced or ("compiled" if "compiled" in _BACKENDS else "python")


def available():
    return sorted(_BACKENDS)


def forward_fn(name=None):
    """Forward-dispatch function for `name` (default: best available)."""
    if name is None:
        name = DEFAULT
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choices: {sorted(_BACKENDS)}") from None
