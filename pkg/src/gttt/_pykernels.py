"""Vectorized numpy/scipy versions of the compiled kernels.

Used when ``gttt._ckernels`` is not built or ``GTTT_FORCE_PYTHON=1``.
Every function returns the same values as its compiled twin up to
floating-point summation order.
"""

import numpy as np
import scipy.sparse as sp


def spmm(offsets, targets, weights, dense):
    n = len(offsets) - 1
    mat = sp.csr_matrix((weights, targets, offsets), shape=(n, dense.shape[0]))
    return np.asarray(mat @ dense, dtype=np.float64)


def gcn_normalize(offsets, targets):
    n = len(offsets) - 1
    deg = np.diff(offsets)
    rows = np.repeat(np.arange(n, dtype=np.int64), deg)
    rows = np.concatenate([rows, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([targets, np.arange(n, dtype=np.int64)])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    inv = 1.0 / np.sqrt(deg + 1.0)
    weights = inv[rows] * inv[cols]
    new_offsets = np.concatenate([[0], np.cumsum(deg + 1)]).astype(np.int64)
    return new_offsets, cols.astype(np.int64), weights


def pagerank_power(offsets, targets, damping, tol, max_iter):
    n = len(offsets) - 1
    deg = np.diff(offsets).astype(np.float64)
    adj = sp.csr_matrix((np.ones(len(targets)), targets, offsets), shape=(n, n))
    dangling_mask = deg == 0
    safe_deg = np.where(dangling_mask, 1.0, deg)
    x = np.full(n, 1.0 / n)
    delta = 0.0
    iters = 0
    for it in range(max_iter):
        share = np.where(dangling_mask, 0.0, x / safe_deg)
        base = (damping * x[dangling_mask].sum() + (1.0 - damping)) / n
        nxt = base + damping * (adj @ share)
        delta = float(np.abs(nxt - x).sum())
        x = nxt
        iters = it + 1
        if delta < tol:
            break
    return x / x.sum(), iters, delta
