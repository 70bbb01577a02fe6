"""Depth-limited breadth-first extraction of a community from node probabilities."""
from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .graph import CommunityResult, HeteroGraph


@dataclass(frozen=True)
class SearchConfig:
    gamma: float
    d_max: float = math.inf
    target_types: frozenset[int] = frozenset()

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.d_max < 0:
            raise ValueError(f"d_max must be >= 0, got {self.d_max}")
        object.__setattr__(self, "target_types", frozenset(int(t) for t in self.target_types))


def _induced_connected(graph: HeteroGraph, members: list[int]) -> bool:
    if len(members) <= 1:
        return True
    ids = np.asarray(members)
    local = np.full(graph.num_nodes, -1)
    local[ids] = np.arange(ids.size)
    ptr, nbr = graph.adj_indptr, graph.adj_neighbors
    rows = np.repeat(np.arange(graph.num_nodes), np.diff(ptr))
    keep = (local[rows] >= 0) & (local[nbr] >= 0)
    adj = sp.coo_matrix((np.ones(keep.sum()), (local[rows[keep]], local[nbr[keep]])), shape=(ids.size,) * 2)
    return connected_components(adj, directed=False)[0] == 1


def search(
    graph: HeteroGraph,
    q: int,
    probabilities,
    config: SearchConfig,
    connectivity: bool = False,
) -> CommunityResult:
    """Queue-driven search from ``q``.

    A dequeued ``(node, depth)`` is expanded only when unvisited and
    ``depth < d_max``.  Every neighbor of an expanded node is enqueued; it also
    joins the community when its type is targeted and its probability exceeds
    ``gamma``.  ``q`` is always a member.
    """
    start = time.perf_counter()
    q = int(q)
    if not 0 <= q < graph.num_nodes:
        raise IndexError(f"query node {q} out of range [0, {graph.num_nodes})")
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    if p.shape[0] != graph.num_nodes:
        raise ValueError(f"expected {graph.num_nodes} probabilities, got {p.shape[0]}")
    targeted = np.zeros(graph.num_node_types, dtype=bool)
    targeted[list(config.target_types)] = True
    accept = (targeted[graph.node_type] & (p > config.gamma)).tolist()
    ptr, nbr = graph.adjacency_lists
    d_max = config.d_max

    members = {q: None}
    visited: set[int] = set()
    queue = deque([(q, 0)])
    deepest = 0
    while queue:
        v, d = queue.popleft()
        if v in visited or not d < d_max:
            continue
        visited.add(v)
        deepest = max(deepest, d)
        for u in nbr[ptr[v]:ptr[v + 1]]:
            queue.append((u, d + 1))
            if accept[u]:
                members[u] = None
    if any(not math.isfinite(p[v]) for v in members) or any(not math.isfinite(p[v]) for v in visited):
        raise ValueError("missing or non-finite probability for a visited node")
    ordered = list(members)
    result = CommunityResult(
        query=q,
        members=ordered,
        probabilities={v: float(p[v]) for v in ordered},
        visited_count=len(visited),
        max_depth_reached=deepest,
        gamma=config.gamma,
        d_max=d_max,
    )
    if connectivity:
        result.connected = _induced_connected(graph, ordered)
    result.millis = (time.perf_counter() - start) * 1000.0
    return result


def full_search(graph: HeteroGraph, q: int, probabilities, gamma: float, target_types, connectivity: bool = False):
    """:func:`search` without a depth bound."""
    return search(graph, q, probabilities, SearchConfig(gamma, math.inf, frozenset(target_types)), connectivity)
