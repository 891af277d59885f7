"""Pure NumPy kernels: the fallback when the compiled extension is absent.

``scan_split_level`` mirrors the native kernel operation-for-operation
(sequential cumulative sums in the same per-node order, identical gain
expression), so a model trained on either backend is bit-identical.
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of a (n,d) and b (m,d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aa = np.einsum("ij,ij->i", a, a)[:, None]
    bb = np.einsum("ij,ij->i", b, b)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def scan_split_level(
    xt: np.ndarray,
    ordert: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    node_of: np.ndarray,
    n_nodes: int,
    node_g: np.ndarray,
    node_h: np.ndarray,
    l2: float,
):
    """Exact greedy split search for every node of one tree level.

    ``xt`` and ``ordert`` are feature-major (n_features, n_samples): ``xt`` is
    the transposed feature matrix, ``ordert[f]`` the sample indices sorting
    feature f ascending. For each node, every feature is scanned in ascending
    value order and the best split by gain wins; ties resolve to the lowest
    feature index, then the lowest threshold.

    Returns (gain, feature, threshold, left_grad_sum, left_hess_sum) arrays
    indexed by node id; feature is -1 where no valid split exists.
    """
    n_feat, n = xt.shape
    best_gain = np.full(n_nodes, -np.inf, dtype=np.float64)
    best_feat = np.full(n_nodes, -1, dtype=np.int32)
    best_thr = np.zeros(n_nodes, dtype=np.float64)
    best_gl = np.zeros(n_nodes, dtype=np.float64)
    best_hl = np.zeros(n_nodes, dtype=np.float64)

    parent_score = node_g * node_g / np.maximum(node_h + l2, 1e-12)

    for nd in range(n_nodes):
        in_node = node_of == nd
        if int(in_node.sum()) < 2:
            continue
        for f in range(n_feat):
            col_order = ordert[f]
            sel = col_order[in_node[col_order]]
            vals = xt[f, sel]
            gap = vals[:-1] < vals[1:]
            if not gap.any():
                continue
            cg = np.cumsum(grad[sel])
            ch = np.cumsum(hess[sel])
            pos = np.nonzero(gap)[0]
            gl = cg[pos]
            hl = ch[pos]
            gr = node_g[nd] - gl
            hr = node_h[nd] - hl
            gains = (
                gl * gl / np.maximum(hl + l2, 1e-12)
                + gr * gr / np.maximum(hr + l2, 1e-12)
                - parent_score[nd]
            )
            k = int(np.argmax(gains))
            if gains[k] > best_gain[nd]:
                best_gain[nd] = float(gains[k])
                best_feat[nd] = f
                best_thr[nd] = (vals[pos[k]] + vals[pos[k] + 1]) / 2.0
                best_gl[nd] = float(gl[k])
                best_hl[nd] = float(hl[k])
    return best_gain, best_feat, best_thr, best_gl, best_hl
