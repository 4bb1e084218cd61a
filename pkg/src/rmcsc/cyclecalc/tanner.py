"""Brute-force cycle counting on a Tanner graph, for small codes and tests."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

#: refuse graphs beyond these edge counts, per cycle length
EDGE_LIMITS = {4: 2_000_000, 6: 200_000, 8: 50_000, 10: 5_000, 12: 2_000}


def _adjacency(H) -> list[np.ndarray]:
    H = sp.csr_matrix(H)
    M, N = H.shape
    Hc = H.tocsc()
    adj = []
    for v in range(N):
        adj.append(Hc.indices[Hc.indptr[v]:Hc.indptr[v + 1]] + N)
    for c in range(M):
        adj.append(H.indices[H.indptr[c]:H.indptr[c + 1]])
    return adj


def tanner_cycle_count(H, length: int, *, force: bool = False) -> int:
    """Number of cycles of exactly ``length`` in the Tanner graph of ``H``.

    Every cycle is rooted at its smallest node and walked in both
    directions by a depth-first search restricted to larger nodes, so the
    raw tally is halved.  Exponential in ``length``; guarded by
    :data:`EDGE_LIMITS` unless ``force`` is set.
    """
    if length < 4 or length % 2:
        raise ValueError(f"cycle length must be even and >= 4, got {length}")
    H = sp.csr_matrix(H)
    H.data[:] = 1
    H.eliminate_zeros()
    if not force and H.nnz > EDGE_LIMITS.get(length, 0):
        raise ValueError(f"graph with {H.nnz} edges is too large for brute-force {length}-cycle counting")
    adj = _adjacency(H)
    n = len(adj)
    on_path = np.zeros(n, dtype=bool)
    total = 0
    for root in range(n):
        closing = set(int(u) for u in adj[root] if u > root)
        if len(closing) < 2:
            continue
        on_path[root] = True
        # iterative DFS: stack of (node, depth, neighbour iterator)
        stack = [(root, 1, iter(adj[root]))]
        while stack:
            node, depth, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                if node != root:
                    on_path[node] = False
                continue
            nxt = int(nxt)
            if nxt <= root or on_path[nxt]:
                continue
            if depth == length - 1:
                if nxt in closing:
                    total += 1
                continue
            on_path[nxt] = True
            stack.append((nxt, depth + 1, iter(adj[nxt])))
        on_path[root] = False
    return total // 2


def girth(H, max_length: int = 12) -> int | None:
    """Length of the shortest cycle up to ``max_length``, else ``None``."""
    for length in range(4, max_length + 1, 2):
        if tanner_cycle_count(H, length, force=True):
            return length
    return None
