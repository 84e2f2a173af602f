# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CSR kernels. Signatures mirror ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def spmm(const long long[::1] offsets, const long long[::1] targets,
         const double[::1] weights, const double[:, ::1] dense):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t k = dense.shape[1]
    out_arr = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, j, t
    cdef double w
    with nogil:
        for i in range(n):
            for e in range(offsets[i], offsets[i + 1]):
                t = targets[e]
                w = weights[e]
                for j in range(k):
                    out[i, j] += w * dense[t, j]
    return out_arr


def gcn_normalize(const long long[::1] offsets, const long long[::1] targets):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t nnz = targets.shape[0]
    new_off_arr = np.empty(n + 1, dtype=np.int64)
    new_tgt_arr = np.empty(nnz + n, dtype=np.int64)
    w_arr = np.empty(nnz + n, dtype=np.float64)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] new_off = new_off_arr
    cdef long long[::1] new_tgt = new_tgt_arr
    cdef double[::1] w = w_arr
    cdef double[::1] inv = inv_arr
    cdef Py_ssize_t i, e, pos
    cdef bint placed
    with nogil:
        for i in range(n):
            inv[i] = 1.0 / sqrt(<double>(offsets[i + 1] - offsets[i] + 1))
        pos = 0
        for i in range(n):
            new_off[i] = pos
            placed = False
            for e in range(offsets[i], offsets[i + 1]):
                if not placed and targets[e] > i:
                    new_tgt[pos] = i
                    w[pos] = inv[i] * inv[i]
                    pos += 1
                    placed = True
                new_tgt[pos] = targets[e]
                w[pos] = inv[i] * inv[targets[e]]
                pos += 1
            if not placed:
                new_tgt[pos] = i
                w[pos] = inv[i] * inv[i]
                pos += 1
        new_off[n] = pos
    return new_off_arr, new_tgt_arr, w_arr


def pagerank_power(const long long[::1] offsets, const long long[::1] targets,
                   double damping, double tol, Py_ssize_t max_iter):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    x_arr = np.full(n, 1.0 / n, dtype=np.float64)
    nxt_arr = np.empty(n, dtype=np.float64)
    share_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] nxt = nxt_arr
    cdef double[::1] share = share_arr
    cdef double dangling, base, acc, delta = 0.0, total
    cdef Py_ssize_t i, e, it, deg
    cdef Py_ssize_t iters = 0
    with nogil:
        for it in range(max_iter):
            dangling = 0.0
            for i in range(n):
                deg = offsets[i + 1] - offsets[i]
                if deg == 0:
                    dangling += x[i]
                    share[i] = 0.0
                else:
                    share[i] = x[i] / deg
            base = (damping * dangling + (1.0 - damping)) / n
            delta = 0.0
            for i in range(n):
                acc = 0.0
                for e in range(offsets[i], offsets[i + 1]):
                    acc += share[targets[e]]
                nxt[i] = base + damping * acc
                delta += fabs(nxt[i] - x[i])
            for i in range(n):
                x[i] = nxt[i]
            iters = it + 1
            if delta < tol:
                break
        total = 0.0
        for i in range(n):
            total += x[i]
        for i in range(n):
            x[i] /= total
    return x_arr, iters, delta
