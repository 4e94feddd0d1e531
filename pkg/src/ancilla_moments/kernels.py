"""Backend selection for the Monte Carlo kernel.

The compiled extension is used when it imports; set
``ANCILLA_MOMENTS_BACKEND=python`` to force the NumPy fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def available_backends():
    return sorted(_BACKENDS)


def _default():
    wanted = os.environ.get("ANCILLA_MOMENTS_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in _BACKENDS:
            raise ImportError(f"backend {wanted!r} not available (have {available_backends()})")
        return wanted
    return "compiled" if _compiled is not None else "python"


BACKEND = _default()


def get(name=None):
    return _BACKENDS[name or BACKEND]


def direct_counts(*args, backend=None):
    return get(backend).direct_counts(*args)
