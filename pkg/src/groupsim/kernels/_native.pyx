# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot-path kernels.

Mirrors ``groupsim.kernels.pure`` exactly: sequential per-node accumulation in
feature-sorted order and an identical gain expression, so either backend
produces bit-identical results.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "native"


def pairwise_sqdist(a_in, b_in):
    """Squared Euclidean distances between rows of a (n,d) and b (m,d)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out


def scan_split_level(
    xt_in,
    ordert_in,
    grad_in,
    hess_in,
    node_of_in,
    int n_nodes,
    node_g_in,
    node_h_in,
    double l2,
):
    """Exact greedy split search for every node of one tree level.

    ``xt`` and ``ordert`` are feature-major (n_features, n_samples) so each
    feature pass reads memory sequentially. Single pass per feature over the
    presorted sample order with per-node running sums; candidate order per
    node is feature-ascending then threshold-ascending, matching the pure
    backend exactly.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xt = np.ascontiguousarray(xt_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] ordert = np.ascontiguousarray(ordert_in, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grad = np.ascontiguousarray(grad_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hess = np.ascontiguousarray(hess_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] node_of = np.ascontiguousarray(node_of_in, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] node_g = np.ascontiguousarray(node_g_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] node_h = np.ascontiguousarray(node_h_in, dtype=np.float64)

    cdef Py_ssize_t n_feat = xt.shape[0], n = xt.shape[1]

    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_gain = np.full(n_nodes, -np.inf, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] best_feat = np.full(n_nodes, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_thr = np.zeros(n_nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_gl = np.zeros(n_nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_hl = np.zeros(n_nodes, dtype=np.float64)

    cdef cnp.ndarray[cnp.float64_t, ndim=1] parent_score = np.empty(n_nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] run_g = np.empty(n_nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] run_h = np.empty(n_nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] last_val = np.empty(n_nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] seen = np.zeros(n_nodes, dtype=np.uint8)

    cdef Py_ssize_t f, p, i
    cdef int nd
    cdef double den, v, gl, hl, gr, hr, gain

    for nd in range(n_nodes):
        den = node_h[nd] + l2
        if den < 1e-12:
            den = 1e-12
        parent_score[nd] = node_g[nd] * node_g[nd] / den

    for f in range(n_feat):
        for nd in range(n_nodes):
            run_g[nd] = 0.0
            run_h[nd] = 0.0
            seen[nd] = 0
        for p in range(n):
            i = ordert[f, p]
            nd = node_of[i]
            if nd < 0:
                continue
            v = xt[f, i]
            if seen[nd] and v > last_val[nd]:
                gl = run_g[nd]
                hl = run_h[nd]
                gr = node_g[nd] - gl
                hr = node_h[nd] - hl
                den = hl + l2
                if den < 1e-12:
                    den = 1e-12
                gain = gl * gl / den
                den = hr + l2
                if den < 1e-12:
                    den = 1e-12
                gain = gain + gr * gr / den - parent_score[nd]
                if gain > best_gain[nd]:
                    best_gain[nd] = gain
                    best_feat[nd] = <int> f
                    best_thr[nd] = (last_val[nd] + v) / 2.0
                    best_gl[nd] = gl
                    best_hl[nd] = hl
            run_g[nd] = run_g[nd] + grad[i]
            run_h[nd] = run_h[nd] + hess[i]
            last_val[nd] = v
            seen[nd] = 1

    return best_gain, best_feat, best_thr, best_gl, best_hl
