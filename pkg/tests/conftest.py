import numpy as np
import pytest

from hetcs.graph import Schema, build_graph

BIB_SCHEMA = {
    "node_types": [
        {"name": "author", "feature_dim": 3},
        {"name": "paper", "feature_dim": 2},
        {"name": "venue", "feature_dim": 4},
    ],
    "edge_types": [
        {"name": "writes", "src": "author", "dst": "paper"},
        {"name": "published_in", "src": "paper", "dst": "venue"},
        {"name": "cites", "src": "paper", "dst": "paper"},
    ],
}


def toy_graph(seed=0, add_inverse=True):
    """10 nodes, 3 node types, 3 base edge types."""
    rng = np.random.default_rng(seed)
    schema = Schema.from_dict(BIB_SCHEMA)
    nodes = {
        "author": ([0, 1, 2, 3], rng.normal(size=(4, 3))),
        "paper": ([4, 5, 6, 7], rng.normal(size=(4, 2))),
        "venue": ([8, 9], rng.normal(size=(2, 4))),
    }
    edges = {
        "writes": ([0, 0, 1, 2, 3, 3], [4, 5, 5, 6, 7, 4]),
        "published_in": ([4, 5, 6, 7], [8, 8, 9, 9]),
        "cites": ([5, 6], [4, 7]),
    }
    return build_graph(schema, nodes, edges, add_inverse=add_inverse)


def random_graph(rng, n_max=20, p=0.2, dims=(3, 2, 4), add_inverse=True, edge_feature_dim=0):
    """Random 3-type graph with every node type present."""
    n = int(rng.integers(6, n_max + 1))
    types = np.concatenate([[0, 1, 2], rng.integers(0, 3, size=n - 3)])
    schema_raw = {
        "node_types": [{"name": f"t{i}", "feature_dim": d} for i, d in enumerate(dims)],
        "edge_types": [],
    }
    edges = {}
    for s in range(3):
        for d in range(3):
            name = f"e{s}{d}"
            et = {"name": name, "src": f"t{s}", "dst": f"t{d}"}
            if edge_feature_dim:
                et["feature_dim"] = edge_feature_dim
            schema_raw["edge_types"].append(et)
            src_ids = np.flatnonzero(types == s)
            dst_ids = np.flatnonzero(types == d)
            mask = rng.random((src_ids.size, dst_ids.size)) < p / 3
            r, c = np.nonzero(mask)
            keep = src_ids[r] != dst_ids[c]
            src, dst = src_ids[r][keep], dst_ids[c][keep]
            feats = rng.normal(size=(src.size, edge_feature_dim)) if edge_feature_dim else None
            edges[name] = (src, dst, feats)
    schema = Schema.from_dict(schema_raw)
    nodes = {
        f"t{i}": (np.flatnonzero(types == i), rng.normal(size=(int((types == i).sum()), dims[i])))
        for i in range(3)
    }
    return build_graph(schema, nodes, edges, add_inverse=add_inverse)


@pytest.fixture
def toy():
    return toy_graph()


# criterion number -> (passed, title, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[PRIMARY] criterion {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
