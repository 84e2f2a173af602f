"""Kernel backend selection.

The compiled extension is preferred. Set ``GTTT_FORCE_PYTHON=1`` to use
the numpy/scipy fallback even when the extension is importable.
"""

import os

import numpy as np

from gttt import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("GTTT_FORCE_PYTHON") != "1":
    try:
        from gttt import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        pass


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def spmm(offsets, targets, weights, dense):
    """Weighted CSR matrix times dense matrix."""
    return _impl.spmm(_idx(offsets), _idx(targets), _f64(weights), _f64(dense))


def gcn_normalize(offsets, targets):
    """Insert self-loops and compute symmetric GCN weights.

    Returns ``(offsets, targets, weights)`` of the normalized operator,
    with targets sorted inside each row.
    """
    return _impl.gcn_normalize(_idx(offsets), _idx(targets))


def pagerank_power(offsets, targets, damping, tol, max_iter):
    """Power iteration; returns ``(scores, iterations, last_l1_change)``."""
    return _impl.pagerank_power(_idx(offsets), _idx(targets), float(damping), float(tol), int(max_iter))
