"""Synthetic bibliographic-style HIN with planted multi-type communities."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .graph import HeteroGraph, QueryTask, Schema, build_graph
from .io import save_communities, save_graph, save_tasks


def _default_counts():
    return {"author": 800, "paper": 800, "venue": 200, "term": 200}


def _default_sizes():
    return {"author": 100, "paper": 100, "venue": 25, "term": 25}


def _default_edges():
    return [
        ("writes", "author", "paper"),
        ("cites", "paper", "paper"),
        ("published_in", "paper", "venue"),
        ("has_term", "paper", "term"),
    ]


@dataclass
class SynthConfig:
    """Generator settings.

    ``community_sizes`` gives the members of each type per community; nodes
    outside every community are background.  The defaults split every node
    into 8 equal communities, so there is no background.  Within a community every
    compatible ordered pair is wired with probability ``p_in``, every other
    pair with ``p_out``.
    """

    node_counts: dict[str, int] = field(default_factory=_default_counts)
    feature_dim: int = 16
    edge_types: list[tuple[str, str, str]] = field(default_factory=_default_edges)
    communities: int = 8
    community_sizes: dict[str, int] = field(default_factory=_default_sizes)
    p_in: float = 0.3
    p_out: float = 0.01
    signal: float = 2.0
    seed: int = 0
    target_types: tuple[str, ...] = ("author", "paper")
    queries_per_community: int = 10
    pos_fraction: float = 0.3
    max_retries: int = 100

    def __post_init__(self):
        if not self.p_in > self.p_out >= 0:
            raise ValueError(f"need p_in > p_out >= 0, got p_in={self.p_in}, p_out={self.p_out}")
        for t, size in self.community_sizes.items():
            if t not in self.node_counts:
                raise ValueError(f"community size given for unknown type {t!r}")
            if size * self.communities > self.node_counts[t]:
                raise ValueError(
                    f"infeasible sizes: {self.communities} communities x {size} {t} nodes > {self.node_counts[t]}"
                )
        for t in self.target_types:
            if self.community_sizes.get(t, 0) < 1:
                raise ValueError(f"target type {t!r} has no community members")

    @classmethod
    def scaled(cls, total_nodes: int, **overrides) -> "SynthConfig":
        """Same type proportions at ``total_nodes``.

        The community count grows with the graph (community sizes shrink only
        when the graph is too small to hold one), and ``p_out`` shrinks so that
        the expected cross-community degree stays what it is at 2,000 nodes.
        """
        base = cls()
        factor = total_nodes / sum(base.node_counts.values())
        counts = {t: max(1, int(round(c * factor))) for t, c in base.node_counts.items()}
        k = overrides.get("communities", max(1, int(base.communities * factor)))
        sizes = overrides.get("community_sizes")
        if sizes is None:
            sizes = {t: max(1, min(s, counts[t] // k)) for t, s in base.community_sizes.items()}
        kw = dict(node_counts=counts, communities=k, community_sizes=sizes, p_out=base.p_out / factor)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthDataset:
    graph: HeteroGraph
    tasks: list[QueryTask]
    communities: list[frozenset[int]]
    config: SynthConfig

    def save(self, directory: str | os.PathLike) -> Path:
        d = Path(directory)
        save_graph(self.graph, d)
        save_tasks(self.graph, self.tasks, d / "tasks.json")
        save_communities(self.communities, d / "communities.json")
        return d


def _bernoulli_block(rng, rows: np.ndarray, cols: np.ndarray, p: float, no_self: bool):
    mask = rng.random((rows.size, cols.size)) < p
    if no_self:
        mask &= rows[:, None] != cols[None, :]
    r, c = np.nonzero(mask)
    return rows[r], cols[c]


def _sparse_pairs(rng, rows: np.ndarray, cols: np.ndarray, p: float):
    """Each pair in ``rows x cols`` independently with probability ``p``."""
    total = rows.size * cols.size
    if total == 0 or p <= 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    k = rng.binomial(total, p)
    flat = rng.choice(total, size=k, replace=False)
    flat.sort()
    return rows[flat // cols.size], cols[flat % cols.size]


def generate(config: SynthConfig | None = None) -> SynthDataset:
    """Draw a planted-community HIN, its query tasks and ground truth."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    types = list(cfg.node_counts)
    offsets = np.cumsum([0] + [cfg.node_counts[t] for t in types])
    n = int(offsets[-1])
    ids = {t: np.arange(offsets[i], offsets[i + 1], dtype=np.int64) for i, t in enumerate(types)}

    # community[v] = c or -1 for background
    community = np.full(n, -1, dtype=np.int64)
    members: dict[str, list[np.ndarray]] = {}
    for t in types:
        perm = rng.permutation(ids[t])
        size = cfg.community_sizes.get(t, 0)
        members[t] = [np.sort(perm[c * size:(c + 1) * size]) for c in range(cfg.communities)]
        for c, m in enumerate(members[t]):
            community[m] = c

    feats = {}
    for t in types:
        means = rng.normal(size=(cfg.communities, cfg.feature_dim))
        means *= cfg.signal / np.linalg.norm(means, axis=1, keepdims=True)
        x = rng.normal(size=(ids[t].size, cfg.feature_dim))
        c = community[ids[t]]
        x[c >= 0] += means[c[c >= 0]]
        feats[t] = x

    edges: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {name: [] for name, _, _ in cfg.edge_types}
    for c in range(cfg.communities):
        all_members = np.concatenate([members[t][c] for t in types])
        local = {v: i for i, v in enumerate(all_members.tolist())}
        for _attempt in range(cfg.max_retries):
            wired = {}
            for name, s, d in cfg.edge_types:
                wired[name] = _bernoulli_block(rng, members[s][c], members[d][c], cfg.p_in, no_self=s == d)
            src = np.concatenate([np.array([local[v] for v in w[0].tolist()], dtype=np.int64) for w in wired.values()])
            dst = np.concatenate([np.array([local[v] for v in w[1].tolist()], dtype=np.int64) for w in wired.values()])
            adj = sp.coo_matrix((np.ones(src.size), (src, dst)), shape=(all_members.size,) * 2)
            if connected_components(adj, directed=False)[0] == 1:
                break
        else:
            raise RuntimeError(f"community {c} still disconnected after {cfg.max_retries} wiring attempts")
        for name, pair in wired.items():
            edges[name].append(pair)

    for name, s, d in cfg.edge_types:
        src, dst = _sparse_pairs(rng, ids[s], ids[d], cfg.p_out)
        keep = (src != dst) & ~((community[src] == community[dst]) & (community[src] >= 0))
        edges[name].append((src[keep], dst[keep]))

    schema = Schema.from_dict({
        "node_types": [{"name": t, "feature_dim": cfg.feature_dim} for t in types],
        "edge_types": [{"name": name, "src": s, "dst": d} for name, s, d in cfg.edge_types],
    })
    edge_tables = {}
    for name, parts in edges.items():
        src = np.concatenate([p[0] for p in parts])
        dst = np.concatenate([p[1] for p in parts])
        order = np.lexsort((dst, src))
        edge_tables[name] = (src[order], dst[order])
    graph = build_graph(schema, {t: (ids[t], feats[t]) for t in types}, edge_tables)

    communities = [frozenset(np.flatnonzero(community == c).tolist()) for c in range(cfg.communities)]
    tasks = make_tasks(graph, communities, cfg.target_types, cfg.queries_per_community, cfg.pos_fraction, rng)
    return SynthDataset(graph, tasks, communities, cfg)


def make_tasks(
    graph: HeteroGraph,
    communities: list[frozenset[int]],
    target_types,
    per_community: int,
    pos_fraction: float,
    rng: np.random.Generator,
) -> list[QueryTask]:
    """Supervision for each planted community.

    ``pos`` is a random ``pos_fraction`` share of the community's targeted
    members (always containing the query); ``neg`` is an equally large uniform
    sample of targeted-type nodes outside the community.
    """
    tids = frozenset(graph.node_type_id(t) if isinstance(t, str) else int(t) for t in target_types)
    targeted = np.flatnonzero(np.isin(graph.node_type, sorted(tids)))
    tasks = []
    for comm in communities:
        inside = np.array(sorted(v for v in comm if int(graph.node_type[v]) in tids), dtype=np.int64)
        outside = np.setdiff1d(targeted, inside)
        k = max(1, int(round(pos_fraction * inside.size)))
        for q in rng.choice(inside, size=min(per_community, inside.size), replace=False).tolist():
            others = rng.choice(inside[inside != q], size=k - 1, replace=False)
            neg = rng.choice(outside, size=min(k, outside.size), replace=False)
            tasks.append(QueryTask(q, {q, *others.tolist()}, set(neg.tolist()), tids))
    return tasks
