"""Hot-loop kernels, compiled when available.

Set ``LINKMIX_PURE_PYTHON=1`` to force the numpy/set implementations.
"""
import os

from . import _slow

BACKEND = "python"
loglik_grid = _slow.loglik_grid
TwoHop = _slow.TwoHop
broadcast = _slow.broadcast
rank_counts = _slow.rank_counts

if not os.environ.get("LINKMIX_PURE_PYTHON"):
    try:
        from . import _fast
    except ImportError:
        _fast = None
    else:
        BACKEND = "cython"
        loglik_grid = _fast.loglik_grid
        TwoHop = _fast.TwoHop
        broadcast = _fast.broadcast
        rank_counts = _fast.rank_counts
