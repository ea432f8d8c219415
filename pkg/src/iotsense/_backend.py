"""Select the compiled kernels when available, else the pure-Python ones.

Set ``IOTSENSE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"

if not os.environ.get("IOTSENSE_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
else:
    _compiled = None

if _compiled is not None:
    expand_clusters = _compiled.expand_clusters
    BACKEND = "cython"
else:
    expand_clusters = _fallback.expand_clusters
