"""Small dense max-flow for contract/resource transportation graphs.

Graphs here have at most a few dozen nodes, so a BFS augmenting-path method on a
dense capacity matrix is plenty.
"""
from __future__ import annotations

from collections import deque

import numpy as np


def max_flow(cap: np.ndarray, source: int, sink: int, eps: float = 1e-12):
    """Edmonds-Karp on a dense capacity matrix.

    Returns ``(value, flow)`` where ``flow[u, v]`` is the net flow on ``u -> v``.
    Residual capacities below ``eps`` count as saturated.
    """
    cap = np.asarray(cap, dtype=float)
    n = cap.shape[0]
    flow = np.zeros_like(cap)
    value = 0.0
    while True:
        parent = np.full(n, -1)
        parent[source] = source
        q = deque([source])
        while q and parent[sink] < 0:
            u = q.popleft()
            resid = cap[u] - flow[u]
            for v in np.nonzero((resid > eps) & (parent < 0))[0]:
                parent[v] = u
                q.append(v)
        if parent[sink] < 0:
            return value, flow
        path = []
        v = sink
        while v != source:
            path.append((parent[v], v))
            v = parent[v]
        aug = min(cap[u, v] - flow[u, v] for u, v in path)
        for u, v in path:
            flow[u, v] += aug
            flow[v, u] -= aug
        value += aug


def residual_reachable(cap, flow, source, eps=1e-12) -> np.ndarray:
    """Nodes reachable from ``source`` in the residual graph (source side of a min cut)."""
    n = cap.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[source] = True
    q = deque([source])
    while q:
        u = q.popleft()
        for v in np.nonzero((cap[u] - flow[u] > eps) & ~seen)[0]:
            seen[v] = True
            q.append(v)
    return seen


def bipartite_flow(demand, supply, edges, eps=1e-12):
    """Route contract demands to resource supplies along ``edges``.

    ``edges`` is a boolean matrix ``(n_contracts, n_resources)``. Returns the flow
    matrix ``r`` with ``r[i, e] >= 0``, row sums <= demand and column sums <=
    supply, plus the contracts on the source side of the final min cut.
    """
    demand = np.asarray(demand, dtype=float)
    supply = np.asarray(supply, dtype=float)
    edges = np.asarray(edges, dtype=bool)
    n, m = edges.shape
    N = n + m + 2
    s, t = n + m, n + m + 1
    cap = np.zeros((N, N))
    cap[s, :n] = demand
    cap[n:n + m, t] = supply
    big = demand.sum() + supply.sum() + 1.0
    cap[:n, n:n + m] = np.where(edges, big, 0.0)
    _, flow = max_flow(cap, s, t, eps=eps * max(1.0, big))
    r = np.maximum(flow[:n, n:n + m], 0.0)
    reach = residual_reachable(cap, flow, s, eps=eps * max(1.0, big))
    return r, reach[:n]
