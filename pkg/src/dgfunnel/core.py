"""Integrator-core selection: compiled extension when available, numpy
fallback otherwise.  Set DGFUNNEL_FORCE_PY=1 to force the fallback."""

from __future__ import annotations

import os

from . import _simcore_py as _py

if os.environ.get("DGFUNNEL_FORCE_PY"):
    _impl = _py
else:
    try:
        from . import _simcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _py

BACKEND = _impl.BACKEND
rk4_span = _impl.rk4_span
control_at = _impl.control_at

# always exported from the reference implementation
eval_f_raw = _py.eval_f_raw
saturate_control = _py.saturate_control
NX = _py.NX
NTH = _py.NTH
NU = _py.NU
NAUG = _py.NAUG


def both_backends():
    """(name, module) pairs for every importable backend."""
    out = [("python", _py)]
    try:
        from . import _simcore  # type: ignore[attr-defined]
        out.append(("cython", _simcore))
    except ImportError:
        pass
    return out
