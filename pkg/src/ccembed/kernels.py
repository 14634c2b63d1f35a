"""Backend selection for the hot kernels.

Prefers the compiled extension; falls back to NumPy implementations when
it is missing or when CCEMBED_FORCE_PYTHON is set to a non-empty value.
Both backends implement the same contracts (see _kernels_py docstrings).
"""

import os

from . import _kernels_py

BACKEND = "python"
legendre_series = _kernels_py.legendre_series
locate_walk = _kernels_py.locate_walk

if not os.environ.get("CCEMBED_FORCE_PYTHON"):
    try:
        from . import _ckern

        legendre_series = _ckern.legendre_series
        locate_walk = _ckern.locate_walk
        BACKEND = "cython"
    except ImportError:
        pass


def get_backends():
    """Return {name: module-like} for every available backend."""
    backends = {"python": _kernels_py}
    try:
        from . import _ckern

        backends["cython"] = _ckern
    except ImportError:
        pass
    return backends
