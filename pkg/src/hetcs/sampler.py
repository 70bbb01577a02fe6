"""Fanout-bounded recursive neighbor sampling of training subgraphs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import HeteroGraph, QueryTask


@dataclass(frozen=True)
class SampledBlock:
    """Induced subgraph over every sampled node, with id maps.

    ``layers[l]`` is the set ``S_l`` of global ids; ``layers[-1]`` holds the
    labeled nodes.  Local id ``i`` corresponds to global id ``global_ids[i]``.
    """

    graph: HeteroGraph
    global_ids: np.ndarray
    layers: tuple[frozenset[int], ...]
    labeled: np.ndarray

    def to_local(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self.global_ids, ids)
        if np.any(pos >= self.global_ids.size) or np.any(self.global_ids[np.minimum(pos, self.global_ids.size - 1)] != ids):
            raise KeyError("node not in sampled block")
        return pos


def induced_subgraph(graph: HeteroGraph, nodes) -> HeteroGraph:
    """Subgraph on ``nodes`` keeping every edge with both endpoints inside.

    Local ids follow ascending global id; row order inside each CSR row is
    preserved.
    """
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    n = graph.num_nodes
    local = np.full(n, -1, dtype=np.int64)
    local[nodes] = np.arange(nodes.size)
    inside = local >= 0
    m = nodes.size

    type_nodes, features = [], []
    for ids, feats in zip(graph.type_nodes, graph.features):
        keep = inside[ids]
        type_nodes.append(local[ids[keep]])
        features.append(feats[keep])

    csr, efeats = [], []
    for r in range(graph.num_edge_types):
        src, dst = graph.edge_list(r)
        keep = inside[src] & inside[dst]
        lsrc, ldst = local[src[keep]], local[dst[keep]]
        indptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(np.bincount(lsrc, minlength=m), out=indptr[1:])
        csr.append((indptr, ldst))
        ef = graph.edge_features[r]
        efeats.append(None if ef is None else ef[keep])

    return HeteroGraph(
        graph.schema,
        graph.node_type[nodes],
        type_nodes,
        features,
        graph.edge_type_names,
        graph.edge_type_endpoints,
        csr,
        efeats,
        graph.inverse_of,
    )


def sample_block(
    graph: HeteroGraph,
    task: QueryTask,
    fanouts: Sequence[int],
    seed: int | Sequence[int] | np.random.Generator = 0,
) -> SampledBlock:
    """Sample a training block for ``task``.

    ``S_L`` is the labeled set.  Walking down from ``l = L`` to ``1``, every
    node of ``S_l`` draws ``min(fanouts[l-1], deg)`` distinct neighbors without
    replacement into ``S_{l-1}``.  With ``fanouts = (20, 10)`` and two layers
    the labeled nodes draw 10 neighbors each and those draw 20.
    """
    fanouts = [int(f) for f in fanouts]
    if not fanouts:
        raise ValueError("need at least one fanout")
    if min(fanouts) < 1:
        raise ValueError(f"fanouts must be >= 1, got {fanouts}")
    labeled = task.labeled
    if labeled.size == 0:
        raise ValueError("task has no labeled nodes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ptr, nbr = graph.adj_indptr, graph.adj_neighbors
    L = len(fanouts)
    layers: list[frozenset[int]] = [frozenset()] * (L + 1)
    layers[L] = frozenset(labeled.tolist())
    for l in range(L, 0, -1):
        f = fanouts[l - 1]
        picked: set[int] = set()
        for v in sorted(layers[l]):
            cand = np.unique(nbr[ptr[v]:ptr[v + 1]])
            if cand.size > f:
                cand = rng.choice(cand, size=f, replace=False)
            picked.update(cand.tolist())
        layers[l - 1] = frozenset(picked)
    everything = np.array(sorted(frozenset().union(*layers)), dtype=np.int64)
    block = induced_subgraph(graph, everything)
    return SampledBlock(block, everything, tuple(layers), np.searchsorted(everything, labeled))
