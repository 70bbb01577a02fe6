import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetcs.graph import validate
from hetcs.io import load_dataset
from hetcs.synth import SynthConfig, generate


def small(**kw):
    base = dict(
        node_counts={"author": 40, "paper": 40, "venue": 10, "term": 10},
        feature_dim=4,
        communities=2,
        community_sizes={"author": 8, "paper": 8, "venue": 2, "term": 2},
        queries_per_community=3,
    )
    base.update(kw)
    return SynthConfig(**base)


def _community_of(ds):
    out = np.full(ds.graph.num_nodes, -1)
    for c, members in enumerate(ds.communities):
        out[sorted(members)] = c
    return out


def test_zero_p_out_has_no_cross_edges():
    ds = generate(small(p_out=0.0))
    comm = _community_of(ds)
    g = ds.graph
    for v in range(g.num_nodes):
        for u in g.adj_neighbors[g.adj_indptr[v]:g.adj_indptr[v + 1]]:
            assert comm[u] == comm[v] and comm[v] >= 0


def test_counts_and_saved_files(tmp_path):
    cfg = small()
    ds = generate(cfg)
    assert validate(ds.graph) == []
    for t, count in cfg.node_counts.items():
        assert ds.graph.type_nodes[ds.graph.node_type_id(t)].size == count
    ds.save(tmp_path)
    g, tasks, comms = load_dataset(tmp_path)
    assert g.num_nodes == sum(cfg.node_counts.values())
    assert len(tasks) == cfg.queries_per_community * cfg.communities
    assert [set(c) for c in comms] == [set(c) for c in ds.communities]
    for t, count in cfg.node_counts.items():
        lines = (tmp_path / f"nodes_{t}.tsv").read_text().splitlines()
        assert len(lines) == count


def test_task_construction():
    ds = generate(small())
    comm = _community_of(ds)
    targeted = {ds.graph.node_type_id("author"), ds.graph.node_type_id("paper")}
    for task in ds.tasks:
        members = {v for v in ds.communities[comm[task.query]] if ds.graph.node_type[v] in targeted}
        assert task.pos <= members and task.query in task.pos
        assert len(task.pos) == round(0.3 * len(members)) == len(task.neg)
        assert not task.neg & members
        assert task.target_types == frozenset(targeted)


def test_binomial_edge_count_within_four_sigma():
    # one community of 50 papers on the single cites type: 50*49 ordered pairs
    cfg = SynthConfig(
        node_counts={"paper": 50, "author": 1},
        feature_dim=2,
        edge_types=[("cites", "paper", "paper"), ("writes", "author", "paper")],
        communities=1,
        community_sizes={"paper": 50},
        p_in=0.3,
        p_out=0.0,
        target_types=("paper",),
        queries_per_community=1,
    )
    counts = []
    for seed in range(5):
        ds = generate(SynthConfig(**{**cfg.__dict__, "seed": seed}))
        counts.append(ds.graph.csr[ds.graph.edge_type_id("cites")][1].size)
    pairs = 50 * 49
    mean, sd = pairs * 0.3, math.sqrt(pairs * 0.3 * 0.7)
    for c in counts:
        assert abs(c - mean) <= 4 * sd


def test_communities_connected_and_signal_present():
    ds = generate(small(signal=3.0))
    g = ds.graph
    feats = np.stack([g.node_features(v) for v in range(g.num_nodes) if g.node_type[v] == 0])
    authors = np.flatnonzero(g.node_type == 0)
    comm = _community_of(ds)[authors]
    inside = feats[comm == 0].mean(axis=0)
    assert np.linalg.norm(inside) > 1.5


def test_same_seed_same_dataset():
    a, b = generate(small(seed=5)), generate(small(seed=5))
    assert a.tasks == b.tasks
    for (p1, i1), (p2, i2) in zip(a.graph.csr, b.graph.csr):
        assert np.array_equal(p1, p2) and np.array_equal(i1, i2)


@pytest.mark.parametrize("kw", [dict(p_in=0.01, p_out=0.1), dict(communities=9)])
def test_infeasible_configs_rejected(kw):
    with pytest.raises(ValueError):
        small(**kw)


def test_scaled_config_keeps_cross_degree():
    base, big = SynthConfig(), SynthConfig.scaled(8000)
    assert sum(big.node_counts.values()) == 8000
    assert big.communities == 32
    assert big.p_out * 8000 == pytest.approx(base.p_out * 2000)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=100, max_value=200_000))
def test_scaled_config_always_feasible(total):
    cfg = SynthConfig.scaled(total)
    for t, size in cfg.community_sizes.items():
        assert 1 <= size * cfg.communities <= cfg.node_counts[t]


def test_default_config_partitions_every_node():
    cfg = SynthConfig()
    assert all(cfg.community_sizes[t] * cfg.communities == c for t, c in cfg.node_counts.items())
