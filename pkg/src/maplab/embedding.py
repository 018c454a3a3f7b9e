"""Deterministic embedding of a finite metric into a tree via its minimum spanning tree.

Every point becomes an MST vertex; since the tree algorithm serves leaves,
each point also gets a pendant leaf at distance ``eps_leaf`` from its MST
vertex.  MST path distances satisfy d <= d_T <= (n-1) d; the pendant edges
add at most 2 * eps_leaf to any leaf-to-leaf distance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InputError, TreeMetric


@dataclass
class Embedding:
    tree: TreeMetric
    point_map: list            # point i -> leaf index in the tree
    mst_parent: list           # parent of each point in the MST (-1 at the root)
    eps_leaf: float

    def mst_distances(self) -> np.ndarray:
        """Path distances between the MST vertices (pendant leaves excluded)."""
        n = len(self.point_map)
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = self.tree.path_distance(i, j)
        return d

    def leaf_distances(self) -> np.ndarray:
        return self.tree.distance_matrix()


def check_metric(D) -> np.ndarray:
    """Validate a distance matrix; a triangle violation reports a witness triple."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise InputError("distance matrix must be square")
    n = len(D)
    if not np.all(np.isfinite(D)):
        raise InputError("distances must be finite")
    if np.any(np.diag(D) != 0):
        raise InputError("diagonal must be zero")
    if not np.array_equal(D, D.T):
        raise InputError("distance matrix must be symmetric")
    off = D[~np.eye(n, dtype=bool)]
    if np.any(off <= 0):
        raise InputError("off-diagonal distances must be positive")
    slack = 1e-12 * float(D.max(initial=0.0))
    via = D[:, :, None] + D[None, :, :]          # via[i, k, j] = d(i,k) + d(k,j)
    excess = D[:, None, :] - via - slack
    if np.any(excess > 0):
        i, k, j = np.unravel_index(int(np.argmax(excess)), excess.shape)
        raise InputError(f"triangle inequality fails: d({i},{j})={D[i, j]:.6g} > "
                         f"d({i},{k})+d({k},{j})={D[i, k] + D[k, j]:.6g}")
    return D


def prim_mst(D: np.ndarray) -> tuple[list, list]:
    """Prim's algorithm from vertex 0; ties go to the lowest (vertex, parent) index."""
    n = len(D)
    parent = [-1] * n
    weight = [0.0] * n
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = D[0].copy()
    best_from = np.zeros(n, dtype=int)
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        v = int(np.argmin(cand))                # first minimum: lowest index
        in_tree[v] = True
        parent[v] = int(best_from[v])
        weight[v] = float(D[parent[v], v])
        closer = (~in_tree) & (D[v] < best)
        best[closer] = D[v][closer]
        best_from[closer] = v
    return parent, weight


def mst_embed(D, eps_rel: float = 1e-6) -> Embedding:
    """Tree metric on pendant leaves hanging off the MST of ``D``, rooted at point 0."""
    D = check_metric(D)
    n = len(D)
    parent, weight = prim_mst(D)
    min_edge = min(weight[1:]) if n > 1 else 1.0
    eps = eps_rel * min_edge
    parents = parent + list(range(n))
    weights = weight + [eps] * n
    leaves = list(range(n, 2 * n))
    tree = TreeMetric(parents, weights, leaves)
    return Embedding(tree, list(range(n)), parent, eps)


def sandwich_ok(D, emb: Embedding) -> bool:
    """d <= d_T <= (n-1) d on MST paths, and pendant leaves within 2 eps_leaf."""
    D = np.asarray(D, dtype=float)
    n = len(D)
    dm = emb.mst_distances()
    off = ~np.eye(n, dtype=bool)
    ok = bool(np.all(D[off] <= dm[off]) and np.all(dm[off] <= (n - 1) * D[off]))
    dl = emb.leaf_distances()
    return ok and bool(np.all(np.abs(dl[off] - dm[off] - 2 * emb.eps_leaf) <= 1e-12 * (1 + dm[off])))
