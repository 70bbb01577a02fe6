"""Set-overlap community metrics and batch evaluation of a trained model."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import HeteroGraph, QueryTask
from .model import Checkpoint, check_compatible, hetero_states, predict
from .search import SearchConfig, search


def f1(pred: Iterable[int], truth: Iterable[int]) -> float:
    pred, truth = set(pred), set(truth)
    if not pred and not truth:
        return 1.0
    tp = len(pred & truth)
    if tp == 0:
        return 0.0
    return 2.0 * tp / (len(pred) + len(truth))


def jaccard(pred: Iterable[int], truth: Iterable[int]) -> float:
    pred, truth = set(pred), set(truth)
    union = pred | truth
    if not union:
        return 1.0
    return len(pred & truth) / len(union)


def _entropy(counts: np.ndarray, total: int) -> float:
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def nmi(pred: Iterable[int], truth: Iterable[int], universe: Iterable[int]) -> float:
    """NMI of the in/out partitions that ``pred`` and ``truth`` induce on ``universe``.

    Normalized by the arithmetic mean of the two entropies.
    """
    universe = set(universe)
    if not universe:
        raise ValueError("nmi: empty universe")
    pred, truth = set(pred), set(truth)
    if not pred <= universe or not truth <= universe:
        raise ValueError("nmi: sets must lie inside the universe")
    n = len(universe)
    both = len(pred & truth)
    table = np.array([[both, len(pred) - both], [len(truth) - both, n - len(pred | truth)]], dtype=np.float64)
    rows, cols = table.sum(axis=1), table.sum(axis=0)
    h_pred, h_truth = _entropy(rows, n), _entropy(cols, n)
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    mi = 0.0
    for i in range(2):
        for j in range(2):
            if table[i, j] > 0:
                mi += table[i, j] / n * math.log(n * table[i, j] / (rows[i] * cols[j]))
    return float(min(1.0, max(0.0, 2.0 * mi / (h_pred + h_truth))))


@dataclass
class EvalReport:
    gamma: float
    d_max: list
    per_task: list[dict] = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    sweep: list[dict] = field(default_factory=list)
    best: dict = field(default_factory=dict)
    latency_ms: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "d_max": self.d_max,
            "mean": self.mean,
            "best": self.best,
            "sweep": self.sweep,
            "latency_ms": self.latency_ms,
            "per_task": self.per_task,
        }

    def to_tsv(self) -> str:
        lines = ["query\td_max\tf1\tjaccard\tnmi\tsize\tmillis"]
        for row in self.per_task:
            lines.append("\t".join(str(row[k]) for k in ("query", "d_max", "f1", "jaccard", "nmi", "size", "millis")))
        return "\n".join(lines) + "\n"


def ground_truth(task: QueryTask, graph: HeteroGraph, communities: Sequence[frozenset[int]] | None) -> set[int]:
    """Targeted members of the planted community holding the query, else ``pos``."""
    if communities:
        for comm in communities:
            if task.query in comm:
                return {v for v in comm if int(graph.node_type[v]) in task.target_types}
    return set(task.pos)


def _dmax_label(d):
    return None if d == math.inf else int(d)


def evaluate(
    graph: HeteroGraph,
    checkpoint: Checkpoint,
    tasks: Sequence[QueryTask],
    gamma: float | None = None,
    d_max: float | Sequence[float] = math.inf,
    communities: Sequence[frozenset[int]] | None = None,
) -> EvalReport:
    """Predict, search and score every task.

    ``d_max`` may be a list of depths (a sweep); ``mean`` then refers to the
    depth with the best mean F1, and ``best`` lists the best depth per metric.
    """
    check_compatible(checkpoint.signature, graph, checkpoint.config.use_edge_features)
    if gamma is None:
        gamma = checkpoint.gamma if checkpoint.gamma is not None else 0.5
    depths = list(d_max) if isinstance(d_max, (list, tuple, range)) else [d_max]
    if not depths:
        raise ValueError("no d_max values to evaluate")
    if not tasks:
        raise ValueError("no tasks to evaluate")
    params, cfg = checkpoint.params, checkpoint.config
    cache = hetero_states(params, cfg, graph)
    rows: dict = {d: [] for d in depths}
    for task in tasks:
        probs = predict(params, cfg, graph, task.query, hetero=cache)
        truth = ground_truth(task, graph, communities)
        universe = np.flatnonzero(np.isin(graph.node_type, sorted(task.target_types))).tolist()
        for d in depths:
            t0 = time.perf_counter()
            res = search(graph, task.query, probs, SearchConfig(gamma, d, task.target_types))
            ms = (time.perf_counter() - t0) * 1000.0
            pred = set(res.members)
            rows[d].append({
                "query": task.query,
                "d_max": _dmax_label(d),
                "f1": f1(pred, truth),
                "jaccard": jaccard(pred, truth),
                "nmi": nmi(pred, truth, universe),
                "size": len(pred),
                "millis": ms,
            })
    sweep = []
    for d in depths:
        r = rows[d]
        sweep.append({
            "d_max": _dmax_label(d),
            "f1": float(np.mean([x["f1"] for x in r])),
            "jaccard": float(np.mean([x["jaccard"] for x in r])),
            "nmi": float(np.mean([x["nmi"] for x in r])),
            "median_ms": float(np.median([x["millis"] for x in r])),
        })
    best = {}
    for metric in ("f1", "jaccard", "nmi"):
        top = max(sweep, key=lambda s: s[metric])
        best[metric] = {"value": top[metric], "d_max": top["d_max"]}
    chosen = max(range(len(depths)), key=lambda i: sweep[i]["f1"])
    ms = [x["millis"] for x in rows[depths[chosen]]]
    return EvalReport(
        gamma=float(gamma),
        d_max=[_dmax_label(d) for d in depths],
        per_task=rows[depths[chosen]],
        mean={k: sweep[chosen][k] for k in ("f1", "jaccard", "nmi")} | {"d_max": sweep[chosen]["d_max"]},
        sweep=sweep if len(depths) > 1 else [],
        best=best,
        latency_ms={"median": float(np.median(ms)), "max": float(np.max(ms)), "mean": float(np.mean(ms))},
    )
