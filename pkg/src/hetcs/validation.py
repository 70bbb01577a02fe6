"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .graph import HeteroGraph, QueryTask, validate


def check_graph(graph) -> HeteroGraph:
    if not isinstance(graph, HeteroGraph):
        raise TypeError(f"expected a HeteroGraph, got {type(graph).__name__}")
    problems = validate(graph)
    if problems:
        raise ValueError("invalid graph: " + "; ".join(problems[:5]))
    return graph


def check_query(graph: HeteroGraph, q) -> int:
    try:
        qi = int(q)
    except (TypeError, ValueError):
        raise TypeError(f"query node must be an integer id, got {q!r}") from None
    if qi != q or not 0 <= qi < graph.num_nodes:
        raise ValueError(f"query node {q!r} is not a node id in [0, {graph.num_nodes})")
    return qi


def resolve_types(graph: HeteroGraph, types: Iterable[str | int] | str) -> frozenset[int]:
    """Node type ids from ids, names or unambiguous name prefixes.

    A comma-separated string is split first, so ``"a,p"`` works.
    """
    if isinstance(types, str):
        types = [t for t in types.split(",") if t.strip()]
    names = graph.node_type_names
    out = set()
    for t in types:
        if isinstance(t, (int, np.integer)):
            if not 0 <= int(t) < len(names):
                raise ValueError(f"node type id {t} out of range")
            out.add(int(t))
            continue
        t = str(t).strip()
        if t in names:
            out.add(names.index(t))
            continue
        hits = [i for i, n in enumerate(names) if n.startswith(t)]
        if len(hits) != 1:
            what = "matches no" if not hits else "is ambiguous among"
            raise ValueError(f"node type {t!r} {what} node types {list(names)}")
        out.add(hits[0])
    if not out:
        raise ValueError("at least one target node type is required")
    return frozenset(out)


def check_tasks(graph: HeteroGraph, tasks: Sequence[QueryTask]) -> list[QueryTask]:
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no query tasks given")
    for i, t in enumerate(tasks):
        if not isinstance(t, QueryTask):
            raise TypeError(f"task {i} is a {type(t).__name__}, expected QueryTask")
        try:
            t.check(graph)
        except ValueError as exc:
            raise ValueError(f"task {i}: {exc}") from None
    return tasks


def check_fanouts(fanouts, layers: int) -> tuple[int, ...]:
    if isinstance(fanouts, str):
        fanouts = [f for f in fanouts.split(",") if f.strip()]
    try:
        out = tuple(int(f) for f in fanouts)
    except (TypeError, ValueError):
        raise ValueError(f"fanouts must be integers, got {fanouts!r}") from None
    if len(out) != layers:
        raise ValueError(f"need one fanout per layer ({layers}), got {len(out)}")
    if min(out) < 1:
        raise ValueError(f"fanouts must be >= 1, got {out}")
    return out
