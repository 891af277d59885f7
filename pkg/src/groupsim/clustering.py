"""From-scratch clustering primitives: K-Means and density-based clustering.

K-Means uses k-means++ seeding and Lloyd iterations, fully deterministic
given the seed (ties resolve to the lowest index). The density clusterer
follows the mutual-reachability construction: core distances at the
``min_samples``-th neighbor (the point itself counts), a minimum spanning
tree of the mutual-reachability graph, a condensed cluster tree at
``min_cluster_size``, and excess-of-mass cluster selection. The cluster tree
root is selectable, so a perfectly homogeneous input yields one cluster
rather than all-noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyInput, InvariantViolation, KTooLarge


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    inertia_history: tuple[float, ...]


@dataclass(frozen=True)
class DensityClusterResult:
    labels: np.ndarray
    cluster_count: int
    min_cluster_size: int


def _seq_sum(values: np.ndarray) -> float:
    # cumsum accumulates sequentially, unlike np.sum's pairwise reduction;
    # keeps results identical to an elementwise loop.
    return float(np.cumsum(values)[-1]) if values.size else 0.0


def _kmeanspp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = kernels.pairwise_sqdist(points, points[chosen[-1] : chosen[-1] + 1])[:, 0]
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0.0:
            # remaining mass exhausted (duplicate points): lowest unused index
            used = set(chosen)
            idx = next(i for i in range(n) if i not in used)
        else:
            r = rng.uniform(0.0, total)
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        nd = kernels.pairwise_sqdist(points, points[idx : idx + 1])[:, 0]
        np.minimum(d2, nd, out=d2)
    return points[np.array(chosen)].copy()


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding; deterministic given seed.

    Stops when the max centroid shift drops below tol or max_iter is hit.
    Inertia is non-increasing across iterations by construction: an update
    that would raise it (floating-point pathology) is rolled back.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptyInput("kmeans requires a non-empty 2-D point array")
    n = pts.shape[0]
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    if k > n:
        raise KTooLarge(f"k={k} exceeds point count {n}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_seed(pts, k, rng)

    history: list[float] = []
    assignments = np.zeros(n, dtype=np.int64)
    inertia = np.inf
    iterations = 0
    for _ in range(max_iter):
        d2 = kernels.pairwise_sqdist(pts, centroids)
        new_assign = np.argmin(d2, axis=1)
        new_inertia = _seq_sum(d2[np.arange(n), new_assign])
        if new_inertia > inertia:
            break
        assignments = new_assign
        inertia = new_inertia
        history.append(inertia)
        iterations += 1

        new_centroids = centroids.copy()
        for j in range(k):
            mask = assignments == j
            if mask.any():
                new_centroids[j] = pts[mask].mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break

    # final assignment against the last accepted centroids
    d2 = kernels.pairwise_sqdist(pts, centroids)
    final_assign = np.argmin(d2, axis=1)
    final_inertia = _seq_sum(d2[np.arange(n), final_assign])
    if final_inertia <= inertia:
        assignments = final_assign
        inertia = final_inertia
        if not history or history[-1] != inertia:
            history.append(inertia)

    return KMeansResult(
        centroids=centroids,
        assignments=assignments.astype(np.int64),
        inertia=float(inertia),
        iterations=iterations,
        inertia_history=tuple(history),
    )


def _prim_mst(weights: np.ndarray) -> list[tuple[float, int, int]]:
    """O(n^2) Prim over a dense symmetric weight matrix, rooted at node 0."""
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    key = weights[0].copy()
    parent = np.zeros(n, dtype=np.int64)
    in_tree[0] = True
    key[0] = np.inf
    edges: list[tuple[float, int, int]] = []
    for _ in range(n - 1):
        masked = np.where(in_tree, np.inf, key)
        u = int(np.argmin(masked))
        edges.append((float(key[u]), int(parent[u]), u))
        in_tree[u] = True
        better = weights[u] < key
        better &= ~in_tree
        key[better] = weights[u][better]
        parent[better] = u
        key[u] = np.inf
    return edges


def _condense_and_select(
    merge_children: list[tuple[int, int]],
    merge_weight: list[float],
    n: int,
    min_cluster_size: int,
) -> tuple[np.ndarray, int]:
    """Condense the single-linkage dendrogram and extract clusters.

    Returns (labels, cluster_count); labels are canonicalized so the cluster
    containing the lowest point index is 0.
    """
    total = n + len(merge_children)

    sizes = np.ones(total, dtype=np.int64)
    for node in range(n, total):
        a, b = merge_children[node - n]
        sizes[node] = sizes[a] + sizes[b]

    def leaves_under(node: int) -> list[int]:
        out: list[int] = []
        stack = [node]
        while stack:
            cur = stack.pop()
            if cur < n:
                out.append(cur)
            else:
                a, b = merge_children[cur - n]
                stack.extend((a, b))
        return out

    # condensed tree rows: cluster -> (child cluster | point) at lambda
    cluster_parent: dict[int, int] = {}
    cluster_birth: dict[int, float] = {0: 0.0}
    cluster_children: dict[int, list[int]] = {0: []}
    point_cluster = np.zeros(n, dtype=np.int64)
    point_lambda = np.zeros(n, dtype=np.float64)
    stability: dict[int, float] = {0: 0.0}
    # the root has no birth event; its stability is measured relative to its
    # first structural event, otherwise the absolute lambda offset lets it
    # outweigh any children
    root_event_lambda = np.inf
    root_event_weight = 0.0
    next_cluster = 1

    root = total - 1
    if root < n:
        # single point: no merges, the lone cluster holds it
        pass
    stack: list[tuple[int, int]] = [(root, 0)]
    while stack:
        node, cluster = stack.pop()
        if node < n:
            point_cluster[node] = cluster
            point_lambda[node] = np.inf
            continue
        w = merge_weight[node - n]
        lam = np.inf if w <= 0.0 else 1.0 / w
        a, b = merge_children[node - n]
        big_a = sizes[a] >= min_cluster_size
        big_b = sizes[b] >= min_cluster_size

        def _fall_out(sub: int, lam: float, cluster: int) -> None:
            for p in leaves_under(sub):
                point_cluster[p] = cluster
                point_lambda[p] = lam

        def _accrue(cluster: int, lam: float, weight: float) -> None:
            nonlocal root_event_lambda, root_event_weight
            birth = cluster_birth[cluster]
            contrib = 0.0 if np.isinf(lam) and np.isinf(birth) else lam - birth
            stability[cluster] += contrib * weight
            if cluster == 0:
                root_event_lambda = min(root_event_lambda, lam)
                root_event_weight += weight

        if big_a and big_b:
            for child in (a, b):
                cid = next_cluster
                next_cluster += 1
                cluster_parent[cid] = cluster
                cluster_birth[cid] = lam
                cluster_children.setdefault(cluster, []).append(cid)
                cluster_children[cid] = []
                stability[cid] = 0.0
                _accrue(cluster, lam, float(sizes[child]))
                stack.append((child, cid))
        elif big_a or big_b:
            keep, drop = (a, b) if big_a else (b, a)
            _accrue(cluster, lam, float(sizes[drop]))
            _fall_out(drop, lam, cluster)
            stack.append((keep, cluster))
        else:
            _accrue(cluster, lam, float(sizes[a] + sizes[b]))
            _fall_out(a, lam, cluster)
            _fall_out(b, lam, cluster)

    if np.isfinite(root_event_lambda):
        stability[0] = stability[0] - root_event_lambda * root_event_weight

    # excess-of-mass, children before parents (child ids are larger)
    selected: dict[int, bool] = {}
    subtree_stability: dict[int, float] = {}
    for cid in sorted(cluster_children, reverse=True):
        kids = cluster_children[cid]
        if not kids:
            selected[cid] = True
            subtree_stability[cid] = stability[cid]
            continue
        child_sum = sum(subtree_stability[c] for c in kids)
        if np.isnan(child_sum):
            child_sum = np.inf
        if stability[cid] >= child_sum:
            selected[cid] = True
            subtree_stability[cid] = stability[cid]
        else:
            selected[cid] = False
            subtree_stability[cid] = child_sum

    # resolve: the first selected cluster on the path down from the root wins
    final: set[int] = set()
    walk = [0]
    while walk:
        cid = walk.pop()
        if selected[cid]:
            final.add(cid)
        else:
            walk.extend(cluster_children[cid])

    labels = np.full(n, -1, dtype=np.int64)
    if final:
        ancestors: dict[int, int] = {}

        def resolve(cid: int) -> int:
            if cid in ancestors:
                return ancestors[cid]
            cur = cid
            path = []
            res = -1
            while True:
                if cur in final:
                    res = cur
                    break
                if cur not in cluster_parent:
                    break
                path.append(cur)
                cur = cluster_parent[cur]
            for c in path:
                ancestors[c] = res
            ancestors[cid] = res
            return res

        for p in range(n):
            labels[p] = resolve(int(point_cluster[p]))

    # canonical labels by first member index
    out = np.full(n, -1, dtype=np.int64)
    mapping: dict[int, int] = {}
    for p in range(n):
        c = int(labels[p])
        if c == -1:
            continue
        if c not in mapping:
            mapping[c] = len(mapping)
        out[p] = mapping[c]
    return out, len(mapping)


def hdbscan(
    points: np.ndarray,
    min_cluster_size: int = 5,
    min_samples: int | None = None,
) -> DensityClusterResult:
    """Density clustering; points in no selected cluster are labeled -1."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptyInput("hdbscan requires a non-empty 2-D point array")
    if min_cluster_size < 2:
        raise InvariantViolation(f"min_cluster_size must be >= 2, got {min_cluster_size}")
    if min_samples is None:
        min_samples = min_cluster_size
    n = pts.shape[0]
    if n < min_cluster_size:
        return DensityClusterResult(
            labels=np.full(n, -1, dtype=np.int64),
            cluster_count=0,
            min_cluster_size=min_cluster_size,
        )

    dist = np.sqrt(kernels.pairwise_sqdist(pts, pts))
    dist = np.maximum(dist, dist.T)
    np.fill_diagonal(dist, 0.0)
    k = min(min_samples, n)
    core = np.sort(dist, axis=1)[:, k - 1]
    mreach = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mreach, 0.0)

    edges = _prim_mst(mreach)
    edges.sort(key=lambda e: (e[0], min(e[1], e[2]), max(e[1], e[2])))

    # single-linkage dendrogram via union-find over sorted edges
    parent = np.arange(2 * n - 1, dtype=np.int64)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = int(parent[x])
        return x

    merge_children: list[tuple[int, int]] = []
    merge_weight: list[float] = []
    nxt = n
    for w, a, b in edges:
        ra, rb = find(a), find(b)
        merge_children.append((ra, rb))
        merge_weight.append(w)
        parent[ra] = nxt
        parent[rb] = nxt
        nxt += 1

    labels, count = _condense_and_select(merge_children, merge_weight, n, min_cluster_size)
    return DensityClusterResult(
        labels=labels, cluster_count=count, min_cluster_size=min_cluster_size
    )
