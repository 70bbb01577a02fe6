"""Heterogeneous information network data model.

Nodes live in a single global id range ``0..n-1``; each node carries exactly one
node type and each edge exactly one edge type.  Adjacency is kept as one CSR
structure per edge type plus a merged per-node view whose row order is
``(edge type id ascending, ingestion order)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

INVERSE_SUFFIX = "^-1"


class GraphBuildError(ValueError):
    """Raised when input tables cannot form a valid heterogeneous graph."""


@dataclass(frozen=True)
class NodeTypeSpec:
    name: str
    feature_dim: int


@dataclass(frozen=True)
class EdgeTypeSpec:
    name: str
    src: str
    dst: str
    feature_dim: int = 0


@dataclass(frozen=True)
class Schema:
    node_types: tuple[NodeTypeSpec, ...]
    edge_types: tuple[EdgeTypeSpec, ...]

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Schema":
        try:
            nts = tuple(NodeTypeSpec(str(t["name"]), int(t["feature_dim"])) for t in raw["node_types"])
            ets = tuple(
                EdgeTypeSpec(str(e["name"]), str(e["src"]), str(e["dst"]), int(e.get("feature_dim", 0)))
                for e in raw["edge_types"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphBuildError(f"malformed schema: {exc!r}") from exc
        return cls(nts, ets)

    def to_dict(self) -> dict:
        return {
            "node_types": [{"name": t.name, "feature_dim": t.feature_dim} for t in self.node_types],
            "edge_types": [
                {"name": e.name, "src": e.src, "dst": e.dst, **({"feature_dim": e.feature_dim} if e.feature_dim else {})}
                for e in self.edge_types
            ],
        }


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class HeteroGraph:
    """Immutable typed multigraph over a global node id space.

    Construct through :func:`build_graph`; the constructor itself performs no
    checking so that :func:`validate` can be exercised on corrupted inputs.

    Attributes
    ----------
    node_type_names, edge_type_names : tuple of str
        Registries; ids are positions.  Inverse edge types follow the base ones.
    node_type : (n,) int array
        Type id of every node.
    type_nodes : tuple of int arrays
        Global ids of each type's nodes, in feature-table row order.
    features : tuple of float arrays
        One ``(count_t, d_t)`` table per node type.
    csr : tuple of (indptr, indices)
        Per edge type adjacency, row = source node.
    edge_features : tuple of (array or None)
        Per edge type, rows aligned with that type's CSR ``indices``.
    """

    def __init__(
        self,
        schema: Schema,
        node_type: np.ndarray,
        type_nodes: Sequence[np.ndarray],
        features: Sequence[np.ndarray],
        edge_type_names: Sequence[str],
        edge_type_endpoints: Sequence[tuple[int, int]],
        csr: Sequence[tuple[np.ndarray, np.ndarray]],
        edge_features: Sequence[np.ndarray | None],
        inverse_of: Sequence[int],
    ):
        self.schema = schema
        self.node_type_names = tuple(t.name for t in schema.node_types)
        self.node_type = _frozen(np.asarray(node_type, dtype=np.int64))
        self.type_nodes = tuple(_frozen(np.asarray(a, dtype=np.int64)) for a in type_nodes)
        self.features = tuple(_frozen(np.asarray(f, dtype=np.float64)) for f in features)
        self.edge_type_names = tuple(edge_type_names)
        self.edge_type_endpoints = tuple((int(s), int(d)) for s, d in edge_type_endpoints)
        self.csr = tuple(
            (_frozen(np.asarray(p, dtype=np.int64)), _frozen(np.asarray(i, dtype=np.int64))) for p, i in csr
        )
        self.edge_features = tuple(None if f is None else _frozen(np.asarray(f, dtype=np.float64)) for f in edge_features)
        self.inverse_of = tuple(int(x) for x in inverse_of)

    # -- sizes -----------------------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return int(self.node_type.shape[0])

    @property
    def num_node_types(self) -> int:
        return len(self.node_type_names)

    @property
    def num_edge_types(self) -> int:
        return len(self.edge_type_names)

    @property
    def num_edges(self) -> int:
        return int(sum(ind.shape[0] for _, ind in self.csr))

    @property
    def has_inverse(self) -> bool:
        return any(x >= 0 for x in self.inverse_of)

    def node_type_id(self, name: str) -> int:
        try:
            return self.node_type_names.index(name)
        except ValueError:
            raise KeyError(f"unknown node type {name!r}") from None

    def edge_type_id(self, name: str) -> int:
        try:
            return self.edge_type_names.index(name)
        except ValueError:
            raise KeyError(f"unknown edge type {name!r}") from None

    @cached_property
    def type_index(self) -> np.ndarray:
        """Row of each node inside its type's feature table."""
        idx = np.full(self.num_nodes, -1, dtype=np.int64)
        for ids in self.type_nodes:
            idx[ids] = np.arange(ids.shape[0])
        return _frozen(idx)

    # -- merged adjacency ------------------------------------------------------
    @cached_property
    def _merged(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        n = self.num_nodes
        srcs, nbrs, etypes, eidx = [], [], [], []
        for r, (indptr, indices) in enumerate(self.csr):
            deg = np.diff(indptr)
            srcs.append(np.repeat(np.arange(n, dtype=np.int64), deg))
            nbrs.append(indices)
            etypes.append(np.full(indices.shape[0], r, dtype=np.int64))
            eidx.append(np.arange(indices.shape[0], dtype=np.int64))
        if srcs:
            src = np.concatenate(srcs)
            order = np.argsort(src, kind="stable")
            src, nbr, et, ei = src[order], np.concatenate(nbrs)[order], np.concatenate(etypes)[order], np.concatenate(eidx)[order]
        else:
            src = nbr = et = ei = np.zeros(0, dtype=np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return _frozen(indptr), _frozen(nbr), _frozen(et), _frozen(ei)

    @property
    def adj_indptr(self) -> np.ndarray:
        return self._merged[0]

    @property
    def adj_neighbors(self) -> np.ndarray:
        return self._merged[1]

    @property
    def adj_edge_types(self) -> np.ndarray:
        return self._merged[2]

    @property
    def adj_edge_index(self) -> np.ndarray:
        return self._merged[3]

    @cached_property
    def adjacency_lists(self) -> tuple[list[int], list[int]]:
        """Merged ``(indptr, neighbors)`` as Python lists for scalar traversal."""
        return self.adj_indptr.tolist(), self.adj_neighbors.tolist()

    def degree(self) -> np.ndarray:
        return np.diff(self.adj_indptr)

    def adjacency(self, v: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Array view of :func:`neighbors`: ``(ids, edge types, edge indices)``."""
        _check_node(self, v)
        lo, hi = self.adj_indptr[v], self.adj_indptr[v + 1]
        return self.adj_neighbors[lo:hi], self.adj_edge_types[lo:hi], self.adj_edge_index[lo:hi]

    def neighbor_sets(self) -> list[set[int]]:
        ptr, nbr = self.adj_indptr, self.adj_neighbors
        return [set(nbr[ptr[v]:ptr[v + 1]].tolist()) for v in range(self.num_nodes)]

    def edge_list(self, etype: int) -> tuple[np.ndarray, np.ndarray]:
        """Source and target arrays of one edge type, in CSR order."""
        indptr, indices = self.csr[etype]
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(indptr)), indices

    def node_features(self, v: int) -> np.ndarray:
        return self.features[self.node_type[v]][self.type_index[v]]

    def __repr__(self) -> str:
        return (
            f"HeteroGraph(nodes={self.num_nodes}, edges={self.num_edges}, "
            f"node_types={list(self.node_type_names)}, edge_types={list(self.edge_type_names)})"
        )


def _check_node(graph: HeteroGraph, v: int) -> None:
    if not 0 <= int(v) < graph.num_nodes:
        raise IndexError(f"node id {v} out of range [0, {graph.num_nodes})")


def neighbors(graph: HeteroGraph, v: int) -> list[tuple[int, int, int]]:
    """``(neighbor id, edge type id, edge index)`` triples of ``v``.

    Ordered by edge type id, then by ingestion order within that type.
    """
    ids, ets, eis = graph.adjacency(v)
    return list(zip(ids.tolist(), ets.tolist(), eis.tolist()))


def _csr_from_edges(n: int, src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst[order], order


def build_graph(
    schema: Schema,
    node_tables: Mapping[str, tuple[Sequence[int], np.ndarray]],
    edge_tables: Mapping[str, tuple] | None = None,
    add_inverse: bool = True,
) -> HeteroGraph:
    """Build and validate a :class:`HeteroGraph`.

    Parameters
    ----------
    schema : Schema
        Declared node types (with feature dims) and edge types.
    node_tables : mapping
        ``type name -> (global node ids, features)`` with features shaped
        ``(len(ids), feature_dim)``.  The union of ids must be ``0..n-1``.
    edge_tables : mapping, optional
        ``edge type name -> (src ids, dst ids[, features])``.  Missing types
        have no edges.
    add_inverse : bool
        Add a reversed companion type ``name^-1`` for every edge type.
    """
    edge_tables = dict(edge_tables or {})
    type_names = [t.name for t in schema.node_types]
    if len(set(type_names)) != len(type_names):
        raise GraphBuildError("duplicate node type names in schema")
    for name in node_tables:
        if name not in type_names:
            raise GraphBuildError(f"node table for undeclared type {name!r}")

    ids_per_type, feats_per_type = [], []
    for t in schema.node_types:
        ids, feats = node_tables.get(t.name, ((), np.zeros((0, t.feature_dim))))
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim == 1 and ids.shape[0] == 0:
            feats = feats.reshape(0, t.feature_dim)
        if feats.ndim != 2 or feats.shape[1] != t.feature_dim:
            raise GraphBuildError(
                f"feature-dim mismatch for node type {t.name!r}: expected {t.feature_dim}, got shape {feats.shape}"
            )
        if feats.shape[0] != ids.shape[0]:
            raise GraphBuildError(
                f"node type {t.name!r}: {ids.shape[0]} ids but {feats.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(feats)):
            raise GraphBuildError(f"non-finite features for node type {t.name!r}")
        ids_per_type.append(ids)
        feats_per_type.append(feats)

    all_ids = np.concatenate(ids_per_type) if ids_per_type else np.zeros(0, dtype=np.int64)
    n = int(all_ids.shape[0])
    if n and (all_ids.min() < 0):
        raise GraphBuildError(f"negative node id {int(all_ids.min())}")
    counts = np.bincount(all_ids, minlength=n) if n else np.zeros(0, dtype=np.int64)
    if counts.shape[0] > n or np.any(counts > 1):
        dup = np.flatnonzero(counts > 1)
        if dup.size:
            raise GraphBuildError(f"duplicate node id {int(dup[0])}")
        raise GraphBuildError(f"node ids must be exactly 0..{n - 1}; found id {int(all_ids.max())}")
    node_type = np.empty(n, dtype=np.int64)
    for t, ids in enumerate(ids_per_type):
        node_type[ids] = t

    et_names = [e.name for e in schema.edge_types]
    if len(set(et_names)) != len(et_names):
        raise GraphBuildError("duplicate edge type names in schema")
    for name in edge_tables:
        if name not in et_names:
            raise GraphBuildError(f"edge table for undeclared edge type {name!r}")

    names, endpoints, csrs, efeats, inverse_of = [], [], [], [], []
    for e in schema.edge_types:
        if e.src not in type_names or e.dst not in type_names:
            raise GraphBuildError(f"edge type {e.name!r} references undeclared node type")
        st, dt = type_names.index(e.src), type_names.index(e.dst)
        table = edge_tables.get(e.name, ((), ()))
        src = np.asarray(table[0], dtype=np.int64).reshape(-1)
        dst = np.asarray(table[1], dtype=np.int64).reshape(-1)
        if src.shape != dst.shape:
            raise GraphBuildError(f"edge type {e.name!r}: src/dst length mismatch")
        for label, arr in (("source", src), ("target", dst)):
            bad = np.flatnonzero((arr < 0) | (arr >= n))
            if bad.size:
                raise GraphBuildError(
                    f"dangling node id {int(arr[bad[0]])} as {label} of edge {int(bad[0])} in {e.name!r}"
                )
        for label, arr, want in (("source", src, st), ("target", dst, dt)):
            bad = np.flatnonzero(node_type[arr] != want)
            if bad.size:
                got = type_names[node_type[arr[bad[0]]]]
                raise GraphBuildError(
                    f"type mismatch on edge {int(bad[0])} of {e.name!r}: {label} {int(arr[bad[0]])} "
                    f"has type {got!r}, expected {type_names[want]!r}"
                )
        feats = None
        if e.feature_dim:
            if len(table) < 3 or table[2] is None:
                raise GraphBuildError(f"edge type {e.name!r} declares features but none were given")
            feats = np.asarray(table[2], dtype=np.float64).reshape(src.shape[0], -1) if src.shape[0] else np.zeros((0, e.feature_dim))
            if feats.shape[1] != e.feature_dim:
                raise GraphBuildError(
                    f"feature-dim mismatch for edge type {e.name!r}: expected {e.feature_dim}, got {feats.shape[1]}"
                )
        elif len(table) >= 3 and table[2] is not None and np.asarray(table[2]).size:
            raise GraphBuildError(f"edge type {e.name!r} has features but schema declares none")
        indptr, indices, order = _csr_from_edges(n, src, dst)
        names.append(e.name)
        endpoints.append((st, dt))
        csrs.append((indptr, indices))
        efeats.append(None if feats is None else feats[order])
        inverse_of.append(-1)

    if add_inverse:
        for r in range(len(schema.edge_types)):
            indptr, indices = csrs[r]
            # Inverse rows follow base CSR order so serialization round-trips.
            bsrc = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
            iptr, iind, order = _csr_from_edges(n, indices, bsrc)
            names.append(names[r] + INVERSE_SUFFIX)
            endpoints.append((endpoints[r][1], endpoints[r][0]))
            csrs.append((iptr, iind))
            efeats.append(None if efeats[r] is None else efeats[r][order])
            inverse_of.append(r)

    graph = HeteroGraph(schema, node_type, ids_per_type, feats_per_type, names, endpoints, csrs, efeats, inverse_of)
    problems = validate(graph)
    if problems:
        raise GraphBuildError("; ".join(problems))
    return graph


def validate(graph: HeteroGraph) -> list[str]:
    """List every violated invariant; an empty list means the graph is valid."""
    report: list[str] = []
    n = graph.node_type.shape[0]
    nt = graph.num_node_types
    if nt + graph.num_edge_types <= 2:
        report.append(f"not heterogeneous: {nt} node types + {graph.num_edge_types} edge types <= 2")
    if n and (graph.node_type.min() < 0 or graph.node_type.max() >= nt):
        report.append("node type id out of range")
    if len(graph.type_nodes) != nt or len(graph.features) != nt:
        report.append(f"expected {nt} per-type node/feature tables")
        return report
    seen = np.zeros(n, dtype=np.int64)
    for t, ids in enumerate(graph.type_nodes):
        name = graph.node_type_names[t]
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            report.append(f"node type {name!r} lists id outside [0, {n})")
            continue
        np.add.at(seen, ids, 1)
        if ids.size and np.any(graph.node_type[ids] != t):
            report.append(f"node type {name!r} lists nodes whose type id differs")
        feats = graph.features[t]
        want_dim = graph.schema.node_types[t].feature_dim
        if feats.shape[0] != ids.shape[0]:
            report.append(
                f"feature table of node type {name!r} has {feats.shape[0]} rows, expected {ids.shape[0]}"
            )
        if feats.ndim != 2 or feats.shape[1] != want_dim:
            report.append(f"feature table of node type {name!r} has dim {feats.shape[1:]}, expected {want_dim}")
    if np.any(seen != 1):
        v = int(np.flatnonzero(seen != 1)[0])
        report.append(f"node {v} belongs to {int(seen[v])} type tables (must be exactly 1)")
    if len(graph.csr) != graph.num_edge_types:
        report.append("CSR count differs from edge type count")
        return report
    for r, (indptr, indices) in enumerate(graph.csr):
        name = graph.edge_type_names[r]
        if indptr.shape[0] != n + 1:
            report.append(f"edge type {name!r}: CSR offsets length {indptr.shape[0]}, expected {n + 1}")
            continue
        if indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            report.append(f"edge type {name!r}: CSR offsets not monotone from 0")
            continue
        if indptr[-1] != indices.shape[0]:
            report.append(f"edge type {name!r}: last offset {int(indptr[-1])} != {indices.shape[0]} targets")
            continue
        bad = np.flatnonzero((indices < 0) | (indices >= n))
        if bad.size:
            report.append(
                f"edge type {name!r}: edge {int(bad[0])} targets node {int(indices[bad[0]])} >= node count {n}"
            )
            continue
        st, dt = graph.edge_type_endpoints[r]
        src = np.repeat(np.arange(n), np.diff(indptr))
        if np.any(graph.node_type[src] != st) or np.any(graph.node_type[indices] != dt):
            report.append(f"edge type {name!r}: endpoint types do not match declaration")
        ef = graph.edge_features[r]
        if ef is not None and ef.shape[0] != indices.shape[0]:
            report.append(f"edge type {name!r}: {ef.shape[0]} feature rows for {indices.shape[0]} edges")
    return report


@dataclass(frozen=True)
class QueryTask:
    """A query node with labeled positives/negatives and the targeted node types."""

    query: int
    pos: frozenset[int]
    neg: frozenset[int]
    target_types: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "pos", frozenset(int(v) for v in self.pos))
        object.__setattr__(self, "neg", frozenset(int(v) for v in self.neg))
        object.__setattr__(self, "target_types", frozenset(int(t) for t in self.target_types))
        if self.pos & self.neg:
            raise ValueError(f"task {self.query}: pos and neg overlap on {sorted(self.pos & self.neg)[:5]}")
        if self.query not in self.pos:
            raise ValueError(f"task {self.query}: query node must be in pos")
        if not self.target_types:
            raise ValueError(f"task {self.query}: empty target type set")

    @property
    def labeled(self) -> np.ndarray:
        """Sorted ids of ``{q} | pos | neg``."""
        return np.array(sorted(self.pos | self.neg), dtype=np.int64)

    def labels_for(self, ids: np.ndarray) -> np.ndarray:
        return np.array([1.0 if int(v) in self.pos else 0.0 for v in ids])

    def check(self, graph: HeteroGraph) -> None:
        n = graph.num_nodes
        for v in self.pos | self.neg:
            if not 0 <= v < n:
                raise ValueError(f"task {self.query}: node {v} out of range")
        for t in self.target_types:
            if not 0 <= t < graph.num_node_types:
                raise ValueError(f"task {self.query}: unknown target type id {t}")
        off = [v for v in self.pos if int(graph.node_type[v]) not in self.target_types]
        if off:
            raise ValueError(f"task {self.query}: positive node {off[0]} is not of a targeted type")


@dataclass
class CommunityResult:
    """Output of a community query."""

    query: int
    members: list[int]
    probabilities: dict[int, float] = field(repr=False)
    visited_count: int
    max_depth_reached: int
    gamma: float
    d_max: float
    millis: float = 0.0
    connected: bool | None = None

    def to_json(self, graph: HeteroGraph) -> dict:
        return {
            "query": self.query,
            "gamma": self.gamma,
            "d_max": None if self.d_max == float("inf") else int(self.d_max),
            "members": [
                {"id": v, "type": graph.node_type_names[graph.node_type[v]], "p": self.probabilities.get(v)}
                for v in self.members
            ],
            "visited": self.visited_count,
            "max_depth_reached": self.max_depth_reached,
            "induced_connected": self.connected,
            "millis": self.millis,
        }
