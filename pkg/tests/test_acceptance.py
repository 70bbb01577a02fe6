"""Acceptance suite: one test per criterion, each recorded as a PASS/FAIL line.

The lines are printed at the end of the pytest run (see ``conftest.py``) and
also from inside each test, so ``pytest -s tests/test_acceptance.py`` shows
them as they happen.
"""
import functools
import json
import math
import time
from dataclasses import replace

import numpy as np

from hetcs import autodiff as ad
from hetcs.autodiff import Tensor
from hetcs.bench import bench
from hetcs.graph import QueryTask
from hetcs.metrics import evaluate, f1, jaccard, nmi
from hetcs.model import (
    GraphSignature,
    ModelConfig,
    encoder_layer,
    forward,
    hetero_states,
    init_params,
    message_plan,
    predict,
    project_features,
)
from hetcs.sampler import sample_block
from hetcs.search import SearchConfig, search
from hetcs.synth import SynthConfig, generate
from hetcs.trainer import TrainConfig, bce_loss, train

from conftest import ACCEPTANCE, random_graph, toy_graph
from dense_oracle import dense_layer, dense_forward, edge_vectors, sigmoid
from test_search import bfs_oracle

SMALL = ModelConfig(layers=2, hidden=8, heads=2, unified_dim=6, edge_dim=3, dropout=0.0)


def criterion(n, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except Exception as exc:
                msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
                ACCEPTANCE[n] = (False, title, msg[:200])
                print(f"[PRIMARY] criterion {n} FAIL: {title} ({msg[:200]})")
                raise
            ACCEPTANCE[n] = (True, title, detail)
            print(f"[PRIMARY] criterion {n} PASS: {title} ({detail})")
        return run
    return wrap


def _params(graph, config, seed, scale=1.0):
    params = init_params(config, GraphSignature.of(graph, config.use_edge_features), seed)
    rng = np.random.default_rng(seed + 100)
    for p in params.values():
        p.data = p.data * scale + 0.1 * rng.normal(size=p.shape)
    return params


@criterion(1, "finite-difference gradient check, full model + BCE, 10-node 3-type toy")
def test_criterion_1_gradients():
    g = toy_graph()
    assert g.num_nodes == 10 and g.num_node_types == 3
    params = _params(g, SMALL, 0, scale=0.5)
    labeled = np.array([0, 1, 5, 8])
    y = np.array([1.0, 1.0, 0.0, 0.0])
    t0 = time.perf_counter()
    errors = ad.finite_diff_check(lambda: bce_loss(forward(params, SMALL, g, 0), y, labeled), params, per_tensor=True)
    secs = time.perf_counter() - t0
    assert set(errors) == set(params)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, f"{worst}: rel err {errors[worst]:.2e}"
    assert secs < 10.0, f"took {secs:.1f} s"
    return f"{len(errors)} tensors, worst rel err {errors[worst]:.1e} ({worst}), {secs:.2f} s"


@criterion(2, "attention weights sum to 1 per destination and head, 100 toys, every layer")
def test_criterion_2_attention_normalization():
    worst, checked = 0.0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n_max=20, p=0.25, edge_feature_dim=2 if seed % 2 else 0)
        cfg = replace(SMALL, layers=2 + seed % 2)
        params = _params(g, cfg, seed)
        trace = {}
        forward(params, cfg, g, int(rng.integers(g.num_nodes)), trace=trace)
        dst = message_plan(g, cfg.use_edge_features).dst.ids
        has_in = np.bincount(dst, minlength=g.num_nodes) > 0
        keys = [k for k in trace if k.endswith(".alpha")]
        assert len(keys) == 2 * cfg.layers
        for k in keys:
            sums = np.zeros((g.num_nodes, cfg.heads))
            np.add.at(sums, dst, trace[k])
            worst = max(worst, float(np.abs(sums[has_in] - 1.0).max(initial=0.0)))
            checked += 1
    assert worst <= 1e-9, f"max |sum - 1| = {worst:.2e}"
    return f"{checked} layer traces, max |sum - 1| = {worst:.1e}"


@criterion(3, "encoder layers match a naive dense reimplementation on graphs of <= 20 nodes")
def test_criterion_3_dense_oracle():
    worst = 0.0
    for seed in range(40):
        rng = np.random.default_rng(1000 + seed)
        feats = 2 if seed % 2 else 0
        g = random_graph(rng, n_max=20, edge_feature_dim=feats)
        assert g.num_nodes <= 20
        cfg = SMALL
        params = _params(g, cfg, seed)
        P = {k: v.data for k, v in params.items()}
        edge_vec = edge_vectors(g, P, bool(feats))
        plan = message_plan(g, cfg.use_edge_features)
        edge_repr = params["edge_embedding"] if "edge_embedding" in params else Tensor(plan.edge_features)
        q = int(rng.integers(g.num_nodes))

        het = hetero_states(params, cfg, g)
        h = project_features(g, params).data
        x = np.zeros((g.num_nodes, 1))
        x[q, 0] = 1.0
        for l in range(cfg.layers):
            h, _ = dense_layer(g, h, P, f"het.{l}", cfg.heads, edge_vec)
            worst = max(worst, float(np.abs(het[l].data - h).max()))
            hq, _ = dense_layer(g, x, P, f"qry.{l}", cfg.heads, edge_vec)
            got = encoder_layer(plan, Tensor(x), params, f"qry.{l}", cfg.heads, edge_repr).data
            worst = max(worst, float(np.abs(got - hq).max()))
            beta = sigmoid(h @ P[f"fuse.{l}.u"] - hq @ P[f"fuse.{l}.u_q"])
            x = beta * h + (1 - beta) * hq
        probs = dense_forward(g, P, cfg, q, use_features=bool(feats))
        worst = max(worst, float(np.abs(predict(params, cfg, g, q) - probs).max()))
    assert worst < 1e-10, f"max abs diff {worst:.2e}"
    return f"40 graphs, both stacks and final probabilities, max abs diff {worst:.1e}"


@criterion(4, "search equals the brute-force oracle, d_max and gamma monotone, 200 graphs of <= 50 nodes")
def test_criterion_4_search_oracle():
    depths = [0, 1, 2, 3, 4, math.inf]
    for seed in range(200):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n_max=50, p=0.15)
        assert g.num_nodes <= 50
        p = rng.random(g.num_nodes)
        q = int(rng.integers(g.num_nodes))
        targets = set(rng.choice(3, size=int(rng.integers(1, 4)), replace=False).tolist())
        gamma = float(rng.random())
        prev = None
        for d in depths:
            got = set(search(g, q, p, SearchConfig(gamma, d, targets)).members)
            assert got == bfs_oracle(g, q, p, gamma, d, targets), f"graph {seed}, d_max {d}"
            assert prev is None or prev <= got, f"graph {seed}: not monotone in d_max at {d}"
            prev = got
        lo, hi = sorted(rng.random(2).tolist())
        for d in depths:
            a = set(search(g, q, p, SearchConfig(hi, d, targets)).members)
            b = set(search(g, q, p, SearchConfig(lo, d, targets)).members)
            assert a <= b, f"graph {seed}: not monotone in gamma at d_max {d}"
    return f"200 graphs x {len(depths)} depths, oracle equal, both monotonicities hold"


def _random_task(rng, g):
    q = int(rng.integers(g.num_nodes))
    others = [v for v in range(g.num_nodes) if v != q]
    picks = rng.choice(others, size=min(4, len(others)), replace=False).tolist()
    types = {int(g.node_type[v]) for v in [q] + picks[:2]}
    return QueryTask(q, {q, *picks[:2]}, set(picks[2:]), types)


@criterion(5, "sampled-block gradients equal full-graph gradients; |S_(l-1)| bounds hold")
def test_criterion_5_sampler():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n_max=20, p=0.3)
        task = _random_task(rng, g)
        big = int(g.degree().max()) + 1
        block = sample_block(g, task, [big, big], seed=seed)
        y = task.labels_for(task.labeled)

        def grads(graph, q, labeled):
            params = init_params(SMALL, GraphSignature.of(g), seed)
            ad.backward(bce_loss(forward(params, SMALL, graph, q), y, labeled))
            return {k: (p.grad if p.grad is not None else np.zeros(p.shape)) for k, p in params.items()}

        full = grads(g, task.query, task.labeled)
        part = grads(block.graph, int(block.to_local([task.query])[0]), block.labeled)
        worst = max(worst, max(float(np.abs(full[k] - part[k]).max()) for k in full))
    assert worst <= 1e-8, f"max gradient diff {worst:.2e}"

    blocks = 0
    for seed in range(300):
        rng = np.random.default_rng(10_000 + seed)
        g = random_graph(rng, n_max=30, p=0.4)
        task = _random_task(rng, g)
        f = [int(rng.integers(1, 5)), int(rng.integers(1, 5))]
        block = sample_block(g, task, f, seed=seed)
        s0, s1, s2 = block.layers
        assert s2 == set(task.labeled.tolist())
        assert len(s1) <= f[1] * len(s2) and len(s0) <= f[0] * len(s1), f"bound broken, seed {seed}, fanouts {f}"
        blocks += 1
    return f"20 toys max gradient diff {worst:.1e}; bounds hold on {blocks} blocks"


def _single_type(task, graph):
    t = int(graph.node_type[task.query])
    keep = lambda s: frozenset(v for v in s if int(graph.node_type[v]) == t)
    return QueryTask(task.query, keep(task.pos) | {task.query}, keep(task.neg), frozenset({t}))


@criterion(6, "planted recovery, LS mode L=2 d=64 K=8 fanouts 20,10, within 5 CPU-minutes")
def test_criterion_6_planted_recovery():
    cpu0 = time.process_time()
    ds = generate(SynthConfig(seed=0))
    g = ds.graph
    assert g.num_node_types == 4 and len(ds.communities) == 8 and abs(g.num_nodes - 2000) <= 100
    mcfg = ModelConfig(layers=2, hidden=64, heads=8, dropout=0.0)
    tcfg = TrainConfig(mode="ls", fanouts=(20, 10), lr=5e-3, epochs=8, patience=3, seed=0)
    report, ckpt = train(g, ds.tasks, mcfg, tcfg)
    test = [ds.tasks[i] for i in report.splits["test"]]
    multi = evaluate(g, ckpt, test, communities=ds.communities).mean
    single = evaluate(g, ckpt, [_single_type(t, g) for t in test], communities=ds.communities).mean
    cpu = time.process_time() - cpu0
    detail = (f"multi F1 {multi['f1']:.3f} J {multi['jaccard']:.3f} NMI {multi['nmi']:.3f}; "
              f"single F1 {single['f1']:.3f}; {len(test)} test queries; {cpu:.0f} CPU-s")
    assert multi["f1"] >= 0.9 and multi["jaccard"] >= 0.8 and multi["nmi"] >= 0.8, detail
    assert single["f1"] >= 0.9, detail
    assert cpu <= 300.0, detail
    return detail


@criterion(7, "LS epoch time grows slower than full; search(d_max=4) >= 2x faster than full_search at 32k")
def test_criterion_7_efficiency(tmp_path):
    rep = bench(sizes=(2000, 8000, 32000), modes=("full", "ls"), d_max=4, reps=5, profile="sparse", seed=0)
    (tmp_path / "bench.json").write_text(json.dumps(rep.to_json(), indent=1))
    print(rep.to_tsv())
    detail = (f"epoch growth 2k->32k full {rep.growth('full'):.2f}x, ls {rep.growth('ls'):.2f}x; "
              f"query speedup at 32k {rep.query_speedup():.1f}x")
    assert rep.growth("ls") < rep.growth("full"), detail
    assert rep.query_speedup() >= 2.0, detail
    return detail


def _worked_metric_examples():
    h_truth = math.log(2)
    h_pred = -(0.25 * math.log(0.25) + 0.75 * math.log(0.75))
    mi = (0.25 * math.log(0.25 / (0.25 * 0.5)) + 0.25 * math.log(0.25 / (0.75 * 0.5))
          + 0.5 * math.log(0.5 / (0.75 * 0.5)))
    return [
        (f1({2, 3}, {2, 3, 4}), 0.8),
        (jaccard({1, 2}, {2, 3}), 1 / 3),
        (nmi({0}, {0, 1}, range(4)), 2 * mi / (h_truth + h_pred)),
        (nmi({0, 1}, {0, 1}, range(4)), 1.0),
    ]


@criterion(8, "metric worked examples to 1e-6; symmetry and F1 = 2J/(1+J) on 1000 pairs")
def test_criterion_8_metrics():
    for got, want in _worked_metric_examples():
        assert abs(got - want) <= 1e-6, (got, want)
    rng = np.random.default_rng(8)
    for _ in range(1000):
        a = set(rng.choice(31, size=int(rng.integers(0, 21)), replace=False).tolist())
        b = set(rng.choice(31, size=int(rng.integers(0, 21)), replace=False).tolist())
        assert f1(a, b) == f1(b, a) and jaccard(a, b) == jaccard(b, a)
        assert abs(nmi(a, b, range(31)) - nmi(b, a, range(31))) <= 1e-12
        j = jaccard(a, b)
        assert abs(f1(a, b) - 2 * j / (1 + j)) <= 1e-12
    return "4 worked examples, 1000 random pairs"


@criterion(9, "same seed gives byte-identical checkpoints, probabilities and communities")
def test_criterion_9_determinism(tmp_path):
    ds = generate(SynthConfig.scaled(300, seed=4))
    mcfg = ModelConfig(layers=2, hidden=16, heads=4, unified_dim=16, edge_dim=4, dropout=0.5)
    tcfg = TrainConfig(mode="ls", fanouts=(5, 3), epochs=2, lr=5e-3, seed=11)
    outputs = []
    for run in ("a", "b"):
        path = tmp_path / f"{run}.json"
        _, ckpt = train(ds.graph, ds.tasks, mcfg, tcfg, path)
        probs, comms = [], []
        for task in ds.tasks[:5]:
            p = predict(ckpt.params, ckpt.config, ds.graph, task.query)
            probs.append(p.tobytes())
            res = search(ds.graph, task.query, p, SearchConfig(ckpt.gamma, math.inf, task.target_types))
            comms.append(json.dumps([res.members, [res.probabilities[v] for v in res.members]]))
        outputs.append((path.read_bytes(), probs, comms))
    (ck_a, p_a, c_a), (ck_b, p_b, c_b) = outputs
    assert ck_a == ck_b, "checkpoint bytes differ"
    assert p_a == p_b, "probabilities differ"
    assert c_a == c_b, "communities differ"
    return f"checkpoint {len(ck_a)} bytes identical; 5 queries identical"
