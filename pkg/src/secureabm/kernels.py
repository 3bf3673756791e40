"""Kernel backend selection.

The compiled ``_core`` extension is used when importable; otherwise the
numpy implementation in ``_pykernels``. Set ``SECUREABM_PURE_PYTHON=1`` to
force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("SECUREABM_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

session_shares = _impl.session_shares
session_partials = _impl.session_partials
group_mod_sum = _impl.group_mod_sum
uniform_mod = _impl.uniform_mod
uniform01 = _impl.uniform01

# always numpy; cheap and backend-independent
add_mod = _pykernels.add_mod
sub_mod = _pykernels.sub_mod
mix64 = _pykernels.mix64


def available_backends() -> dict[str, object]:
    backends: dict[str, object] = {"python": _pykernels}
    try:
        from . import _core

        backends["cython"] = _core
    except ImportError:
        pass
    return backends
