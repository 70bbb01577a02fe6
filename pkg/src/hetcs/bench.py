"""Wall-clock scaling of training steps and community search on generated graphs."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Adam
from .model import GraphSignature, ModelConfig, hetero_states, init_params, predict
from .search import SearchConfig, full_search, search
from .synth import SynthConfig, generate
from .trainer import TrainConfig, train_step

log = logging.getLogger(__name__)

PROFILES = ("sparse", "dense")


def bench_config(total_nodes: int, profile: str = "sparse", seed: int = 0) -> SynthConfig:
    """Generator settings for one benchmark size.

    ``dense`` is the default generator scaled to ``total_nodes``.  ``sparse``
    keeps the same schema and ``p_in`` but plants small communities over a
    mostly background graph, giving a mean degree near 4.
    """
    if profile == "dense":
        return SynthConfig.scaled(total_nodes, seed=seed)
    if profile != "sparse":
        raise ValueError(f"profile must be one of {PROFILES}, got {profile!r}")
    return SynthConfig.scaled(
        total_nodes,
        community_sizes={"author": 12, "paper": 12, "venue": 2, "term": 3},
        p_out=0.002 * 2000 / total_nodes,
        seed=seed,
    )


@dataclass
class BenchReport:
    sizes: list[dict] = field(default_factory=list)
    train_ms: dict[str, list] = field(default_factory=dict)
    query_ms: dict[str, list] = field(default_factory=dict)
    visited: dict[str, list] = field(default_factory=dict)
    fanouts: list[int] = field(default_factory=list)
    d_max: float = 4
    reps: int = 5
    tasks_per_epoch: int = 4
    profile: str = "sparse"
    seed: int = 0
    outputs_sha256: str = ""

    def growth(self, mode: str) -> float:
        """Epoch time at the largest size over the smallest."""
        t = self.train_ms[mode]
        return t[-1] / t[0]

    def query_speedup(self) -> float:
        """full_search over depth-bounded search median latency, largest size."""
        return self.query_ms["full_search"][-1] / self.query_ms["search"][-1]

    def to_json(self) -> dict:
        out = asdict(self)
        out["d_max"] = None if self.d_max == math.inf else self.d_max
        return out

    def to_tsv(self) -> str:
        modes = sorted(self.train_ms)
        head = ["nodes", "edges"] + [f"train_ms_{m}" for m in modes] + ["search_ms", "full_search_ms"]
        lines = ["\t".join(head)]
        for i, s in enumerate(self.sizes):
            row = [s["nodes"], s["edges"]] + [self.train_ms[m][i] for m in modes]
            row += [self.query_ms["search"][i], self.query_ms["full_search"][i]]
            lines.append("\t".join("oom" if v is None else str(v) for v in row))
        return "\n".join(lines) + "\n"


def _time_epoch(graph, tasks, model_config, train_config, reps) -> float:
    times = []
    for rep in range(reps):
        params = init_params(model_config, GraphSignature.of(graph, model_config.use_edge_features), train_config.seed)
        opt = Adam(params, lr=train_config.lr, weight_decay=train_config.weight_decay)
        t0 = time.perf_counter()
        for i, task in enumerate(tasks):
            train_step(params, opt, model_config, graph, task, train_config, np.random.default_rng([train_config.seed, rep, i]))
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def bench(
    sizes: Sequence[int] = (2000, 8000, 32000),
    modes: Sequence[str] = ("full", "ls"),
    model_config: ModelConfig | None = None,
    fanouts: Sequence[int] = (20, 10),
    d_max: float = 4,
    reps: int = 5,
    tasks_per_epoch: int = 4,
    queries: int = 20,
    profile: str = "sparse",
    seed: int = 0,
) -> BenchReport:
    """Time training epochs per mode and query latency per search variant.

    An epoch here is one optimizer step on each of the same
    ``tasks_per_epoch`` tasks, so sizes are compared at equal work in tasks.
    Query latency covers the search only, on probabilities from a seeded,
    untrained model; every cell is the median over ``reps`` repetitions.
    Cells that run out of memory are reported as ``None``.
    """
    if reps < 1 or tasks_per_epoch < 1 or queries < 1:
        raise ValueError("reps, tasks_per_epoch and queries must be >= 1")
    mcfg = model_config or ModelConfig()
    report = BenchReport(
        fanouts=[int(f) for f in fanouts], d_max=d_max, reps=reps, tasks_per_epoch=tasks_per_epoch,
        profile=profile, seed=seed,
    )
    report.train_ms = {m: [] for m in modes}
    report.query_ms = {"search": [], "full_search": []}
    report.visited = {"search": [], "full_search": []}
    digest = hashlib.sha256()
    for n in sizes:
        ds = generate(bench_config(n, profile, seed))
        g = ds.graph
        report.sizes.append({"nodes": g.num_nodes, "edges": g.num_edges})
        tasks = ds.tasks[:tasks_per_epoch]
        for mode in modes:
            tcfg = TrainConfig(mode=mode, fanouts=tuple(fanouts), seed=seed)
            try:
                ms = _time_epoch(g, tasks, mcfg, tcfg, reps)
            except MemoryError:
                ms = None
            report.train_ms[mode].append(ms)
            log.info("nodes=%d mode=%s epoch_ms=%s", g.num_nodes, mode, ms)

        params = init_params(mcfg, GraphSignature.of(g, mcfg.use_edge_features), seed)
        cache = hetero_states(params, mcfg, g)
        lat = {"search": [], "full_search": []}
        vis = {"search": [], "full_search": []}
        for task in ds.tasks[:queries]:
            p = predict(params, mcfg, g, task.query, hetero=cache)
            for _ in range(reps):
                a = search(g, task.query, p, SearchConfig(0.5, d_max, task.target_types))
                b = full_search(g, task.query, p, 0.5, task.target_types)
                lat["search"].append(a.millis)
                lat["full_search"].append(b.millis)
            vis["search"].append(a.visited_count)
            vis["full_search"].append(b.visited_count)
            digest.update(json.dumps([a.members, b.members]).encode())
        for k in lat:
            report.query_ms[k].append(float(np.median(lat[k])))
            report.visited[k].append(float(np.median(vis[k])))
        log.info("nodes=%d search_ms=%.3f full_search_ms=%.3f", g.num_nodes,
                 report.query_ms["search"][-1], report.query_ms["full_search"][-1])
    report.outputs_sha256 = digest.hexdigest()
    return report
