"""Dataset directory reader/writer.

Layout::

    schema.json          {"node_types": [{name, feature_dim}], "edge_types": [{name, src, dst, feature_dim?}]}
    nodes_<type>.tsv     node_id TAB f1 .. f_dt
    edges_<etype>.tsv    src TAB dst [TAB f1 .. f_de]
    tasks.json           [{"query", "pos", "neg", "target_types"}]
    communities.json     optional ground truth: {"communities": [[ids...], ...]}
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import HeteroGraph, QueryTask, Schema, build_graph


class DatasetFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_rows(path: Path, n_int: int, n_float: int | None) -> tuple[np.ndarray, np.ndarray]:
    ints, floats = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if n_float is not None and len(cols) != n_int + n_float:
                raise DatasetFormatError(
                    f"{path.name}:{lineno}: expected {n_int + n_float} tab-separated columns, got {len(cols)}"
                )
            try:
                ints.append([int(c) for c in cols[:n_int]])
            except ValueError:
                raise DatasetFormatError(f"{path.name}:{lineno}: non-integer node id in {cols[:n_int]!r}") from None
            try:
                row = [float(c) for c in cols[n_int:]]
            except ValueError:
                raise DatasetFormatError(f"{path.name}:{lineno}: malformed number in {line!r}") from None
            if not all(np.isfinite(row)):
                raise DatasetFormatError(f"{path.name}:{lineno}: non-finite value")
            floats.append(row)
    k = n_float or 0
    return (
        np.array(ints, dtype=np.int64).reshape(len(ints), n_int),
        np.array(floats, dtype=np.float64).reshape(len(floats), k),
    )


def load_graph(directory: str | os.PathLike, add_inverse: bool = True) -> HeteroGraph:
    d = Path(directory)
    try:
        raw = json.loads((d / "schema.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetFormatError(f"{d}: missing schema.json") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"schema.json:{exc.lineno}: {exc.msg}") from None
    schema = Schema.from_dict(raw)
    nodes = {}
    for t in schema.node_types:
        p = d / f"nodes_{t.name}.tsv"
        if not p.exists():
            raise DatasetFormatError(f"{d}: missing {p.name}")
        ids, feats = _read_rows(p, 1, t.feature_dim)
        nodes[t.name] = (ids[:, 0], feats)
    edges = {}
    for e in schema.edge_types:
        p = d / f"edges_{e.name}.tsv"
        if not p.exists():
            continue
        ids, feats = _read_rows(p, 2, e.feature_dim)
        edges[e.name] = (ids[:, 0], ids[:, 1], feats if e.feature_dim else None)
    return build_graph(schema, nodes, edges, add_inverse=add_inverse)


def save_graph(graph: HeteroGraph, directory: str | os.PathLike) -> None:
    """Write the base (non-inverse) part of ``graph`` in dataset layout."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "schema.json").write_text(json.dumps(graph.schema.to_dict(), indent=2) + "\n", encoding="utf-8")
    for t, spec in enumerate(graph.schema.node_types):
        with open(d / f"nodes_{spec.name}.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for v, row in zip(graph.type_nodes[t].tolist(), graph.features[t]):
                fh.write("\t".join([str(v), *map(_fmt, row)]) + "\n")
    for r, spec in enumerate(graph.schema.edge_types):
        src, dst = graph.edge_list(r)
        feats = graph.edge_features[r]
        with open(d / f"edges_{spec.name}.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for i, (s, t) in enumerate(zip(src.tolist(), dst.tolist())):
                cols = [str(s), str(t)]
                if feats is not None:
                    cols += map(_fmt, feats[i])
                fh.write("\t".join(cols) + "\n")


def _type_ids(graph: HeteroGraph, names: Iterable) -> frozenset[int]:
    out = []
    for t in names:
        out.append(int(t) if isinstance(t, int) else graph.node_type_id(str(t)))
    return frozenset(out)


def task_from_json(graph: HeteroGraph, raw: dict) -> QueryTask:
    task = QueryTask(int(raw["query"]), raw["pos"], raw["neg"], _type_ids(graph, raw["target_types"]))
    task.check(graph)
    return task


def task_to_json(graph: HeteroGraph, task: QueryTask) -> dict:
    return {
        "query": task.query,
        "pos": sorted(task.pos),
        "neg": sorted(task.neg),
        "target_types": [graph.node_type_names[t] for t in sorted(task.target_types)],
    }


def load_tasks(graph: HeteroGraph, path: str | os.PathLike) -> list[QueryTask]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{Path(path).name}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, list):
        raise DatasetFormatError(f"{Path(path).name}: expected a JSON array of tasks")
    tasks = []
    for i, item in enumerate(raw):
        try:
            tasks.append(task_from_json(graph, item))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{Path(path).name}: task #{i}: {exc}") from None
    return tasks


def save_tasks(graph: HeteroGraph, tasks: Sequence[QueryTask], path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps([task_to_json(graph, t) for t in tasks]) + "\n", encoding="utf-8")


def load_communities(path: str | os.PathLike) -> list[frozenset[int]] | None:
    p = Path(path)
    if not p.exists():
        return None
    raw = json.loads(p.read_text(encoding="utf-8"))
    return [frozenset(int(v) for v in c) for c in raw["communities"]]


def save_communities(communities: Sequence[Iterable[int]], path: str | os.PathLike) -> None:
    body = {"communities": [sorted(int(v) for v in c) for c in communities]}
    Path(path).write_text(json.dumps(body) + "\n", encoding="utf-8")


def load_dataset(directory: str | os.PathLike, add_inverse: bool = True):
    """Return ``(graph, tasks, communities or None)`` from a dataset directory."""
    d = Path(directory)
    graph = load_graph(d, add_inverse=add_inverse)
    tasks = load_tasks(graph, d / "tasks.json") if (d / "tasks.json").exists() else []
    return graph, tasks, load_communities(d / "communities.json")
