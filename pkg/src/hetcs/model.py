"""Query-conditioned heterogeneous graph attention network.

Two stacks of edge-aware multi-head attention layers run side by side: a
heterogeneous stack over type-projected node features (independent of the
query) and a query stack seeded with a one-hot query indicator.  After every
layer the two views are mixed by a per-node two-way attention; the mixed rows
feed the next query layer, and the last mixed rows go through a small MLP and
a sigmoid to give community membership probabilities.

Weights use the column-vector convention: a matrix of shape ``(out, in)`` is
applied as ``H @ W.T``.  Multi-head weights are stored concatenated, with head
``k`` owning output columns ``k*d/K:(k+1)*d/K``.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Segments, Tensor
from .graph import HeteroGraph

CHECKPOINT_FORMAT = "hetcs-checkpoint"
CHECKPOINT_VERSION = 1
ENCODERS = ("both", "hetero", "query")


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 8
    unified_dim: int = 64
    edge_dim: int = 16
    dropout: float = 0.5
    mlp_hidden: int | None = None
    edge_semantic: bool = True
    encoders: str = "both"
    use_edge_features: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1 or self.hidden % self.heads:
            raise ValueError(f"hidden ({self.hidden}) must be a positive multiple of heads ({self.heads})")
        if min(self.unified_dim, self.edge_dim) < 1:
            raise ValueError("unified_dim and edge_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.encoders not in ENCODERS:
            raise ValueError(f"encoders must be one of {ENCODERS}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def mlp_width(self) -> int:
        return self.mlp_hidden or self.hidden

    def to_dict(self) -> dict:
        return asdict(self)


# -- graph-side precomputation -------------------------------------------------
@dataclass(frozen=True)
class GraphSignature:
    """What a parameter set needs to know about the graph it runs on."""

    node_types: tuple[tuple[str, int], ...]
    edge_types: tuple[str, ...]
    edge_feature_dim: int = 0

    @classmethod
    def of(cls, graph: HeteroGraph, use_edge_features: bool = True) -> "GraphSignature":
        dims = {0 if f is None else f.shape[1] for f in graph.edge_features}
        efd = dims.pop() if use_edge_features and len(dims) == 1 and 0 not in dims else 0
        return cls(
            tuple((t.name, t.feature_dim) for t in graph.schema.node_types),
            graph.edge_type_names,
            efd,
        )

    def to_dict(self) -> dict:
        return {"node_types": [list(t) for t in self.node_types], "edge_types": list(self.edge_types),
                "edge_feature_dim": self.edge_feature_dim}

    @classmethod
    def from_dict(cls, raw: dict) -> "GraphSignature":
        return cls(tuple((str(n), int(d)) for n, d in raw["node_types"]), tuple(raw["edge_types"]),
                   int(raw.get("edge_feature_dim", 0)))


@dataclass(frozen=True)
class MessagePlan:
    """Edge arrays of a graph laid out for message passing.

    Row ``e`` is the entry ``j`` in the neighbor list of ``i``: messages flow
    from ``src=j`` into ``dst=i``.  Rows are grouped by ``dst``.
    """

    num_nodes: int
    dst: Segments
    src: Segments
    etype: np.ndarray
    etype_seg: Segments
    edge_features: np.ndarray | None
    feature_perm: Segments
    type_features: tuple[np.ndarray, ...]


def message_plan(graph: HeteroGraph, use_edge_features: bool = True) -> MessagePlan:
    key = ("_message_plan", use_edge_features)
    cached = graph.__dict__.get(key)
    if cached is not None:
        return cached
    n = graph.num_nodes
    dst = np.repeat(np.arange(n, dtype=np.int64), graph.degree())
    src = graph.adj_neighbors
    et = graph.adj_edge_types
    efeats = None
    if GraphSignature.of(graph, use_edge_features).edge_feature_dim:
        efeats = np.zeros((src.shape[0], graph.edge_features[0].shape[1]))
        for r, feats in enumerate(graph.edge_features):
            rows = et == r
            efeats[rows] = feats[graph.adj_edge_index[rows]]
    offsets = np.cumsum([0] + [ids.shape[0] for ids in graph.type_nodes])
    perm = offsets[graph.node_type] + graph.type_index
    plan = MessagePlan(
        num_nodes=n,
        dst=Segments.from_ids(dst, n),
        src=Segments.from_ids(src, n),
        etype=et,
        etype_seg=Segments.from_ids(et, graph.num_edge_types),
        edge_features=efeats,
        feature_perm=Segments.from_ids(perm, n),
        type_features=graph.features,
    )
    graph.__dict__[key] = plan
    return plan


def _group_matrix(hidden: int, heads: int) -> np.ndarray:
    """``(hidden, heads)`` 0/1 matrix summing each head's columns."""
    g = np.zeros((hidden, heads))
    g[np.arange(hidden), np.arange(hidden) // (hidden // heads)] = 1.0
    return g


# -- parameters ----------------------------------------------------------------
def _encoder_names(config: ModelConfig) -> list[str]:
    return {"both": ["het", "qry"], "hetero": ["het"], "query": ["qry"]}[config.encoders]


def param_shapes(config: ModelConfig, sig: GraphSignature) -> dict[str, tuple[int, ...]]:
    """Name and shape of every learnable tensor, in canonical order."""
    d, du, de = config.hidden, config.unified_dim, config.edge_dim
    shapes: dict[str, tuple[int, ...]] = {}
    if "het" in _encoder_names(config):
        for name, dt in sig.node_types:
            shapes[f"proj.{name}"] = (du, dt)
    edge_in = sig.edge_feature_dim or de
    if config.edge_semantic and not sig.edge_feature_dim:
        shapes["edge_embedding"] = (len(sig.edge_types), de)
    for enc in _encoder_names(config):
        for l in range(config.layers):
            d_in = d if l else (du if enc == "het" else 1)
            shapes[f"{enc}.{l}.W"] = (d, d_in)
            if config.edge_semantic:
                shapes[f"{enc}.{l}.W_e"] = (d, edge_in)
            shapes[f"{enc}.{l}.a"] = (3 if config.edge_semantic else 2, d)
            shapes[f"{enc}.{l}.W_r"] = (d, d_in)
    if config.encoders == "both":
        for l in range(config.layers):
            shapes[f"fuse.{l}.u"] = (d, 1)
            shapes[f"fuse.{l}.u_q"] = (d, 1)
    m = config.mlp_width
    shapes["mlp.W1"] = (m, d)
    shapes["mlp.b1"] = (1, m)
    shapes["mlp.W2"] = (1, m)
    shapes["mlp.b2"] = (1, 1)
    return shapes


def init_params(config: ModelConfig, sig: GraphSignature, seed: int = 0) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config, sig).items():
        if name.startswith("mlp.b"):
            data = np.zeros(shape)
        else:
            if name.endswith(".a"):
                fan = shape[0] * config.head_dim + 1
            else:
                fan = shape[0] + shape[1]
            s = np.sqrt(6.0 / fan)
            data = rng.uniform(-s, s, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def check_params(params: dict[str, Tensor], config: ModelConfig, sig: GraphSignature) -> None:
    want = param_shapes(config, sig)
    missing = sorted(set(want) - set(params))
    extra = sorted(set(params) - set(want))
    if missing or extra:
        raise ValueError(f"parameter set mismatch: missing={missing[:5]} unexpected={extra[:5]}")
    for name, shape in want.items():
        if params[name].shape != shape:
            raise ValueError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name].data)):
            raise ValueError(f"parameter {name!r} has non-finite entries")


# -- building blocks -----------------------------------------------------------
def project_features(graph: HeteroGraph, params: dict[str, Tensor], plan: MessagePlan | None = None) -> Tensor:
    """Map each node's raw features into the shared space with its type's matrix."""
    plan = plan or message_plan(graph)
    blocks = []
    for name, feats in zip(graph.node_type_names, plan.type_features):
        w = params.get(f"proj.{name}")
        if w is None:
            raise KeyError(f"no projection matrix for node type {name!r}")
        blocks.append(ad.matmul(Tensor(feats), w.T))
    return ad.gather_rows(ad.concat(blocks, axis=0), plan.feature_perm)


def query_indicator(graph: HeteroGraph, q: int) -> np.ndarray:
    """``(n, 1)`` column with a single 1 at the query node."""
    if not 0 <= int(q) < graph.num_nodes:
        raise IndexError(f"query node {q} out of range [0, {graph.num_nodes})")
    x = np.zeros((graph.num_nodes, 1))
    x[int(q), 0] = 1.0
    return x


def edge_attention(
    z: Tensor,
    plan: MessagePlan,
    a: Tensor,
    heads: int,
    edge_repr: Tensor | None = None,
    w_e: Tensor | None = None,
) -> Tensor:
    """Per-edge, per-head attention weights normalized over each ``dst``'s neighbors.

    ``z`` holds the already-transformed node rows ``W h``.  ``a`` stacks the
    attention vector pieces for the destination row, the neighbor row and (when
    present) the transformed edge descriptor.  ``edge_repr`` is either one row
    per edge type or one row per edge.
    """
    d = z.shape[1]
    if a.shape[1] != d:
        raise ad.ShapeError(f"edge_attention: attention width {a.shape[1]} != transformed width {d}")
    group = Tensor(_group_matrix(d, heads))
    s_dst = ad.matmul(z * ad.gather_rows(a, [0]), group)
    s_src = ad.matmul(z * ad.gather_rows(a, [1]), group)
    score = ad.gather_rows(s_dst, plan.dst) + ad.gather_rows(s_src, plan.src)
    if edge_repr is not None:
        if a.shape[0] < 3:
            raise ad.ShapeError("edge_attention: edge descriptors given but attention vector has no edge part")
        ew = ad.matmul(edge_repr, w_e.T)
        s_edge = ad.matmul(ew * ad.gather_rows(a, [2]), group)
        if plan.edge_features is None:
            s_edge = ad.gather_rows(s_edge, plan.etype_seg)
        score = score + s_edge
    return ad.segment_softmax(ad.leaky_relu(score, ad.LEAKY_SLOPE), plan.dst)


def encoder_layer(
    plan: MessagePlan,
    h_in: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    heads: int,
    edge_repr: Tensor | None = None,
    trace: dict | None = None,
) -> Tensor:
    """ELU( concat_k sum_j alpha_ijk W_k h_j  +  W_r h_i )."""
    w, w_r = params[f"{prefix}.W"], params[f"{prefix}.W_r"]
    if h_in.shape != (plan.num_nodes, w.shape[1]):
        raise ad.ShapeError(f"{prefix}: input shape {h_in.shape}, expected {(plan.num_nodes, w.shape[1])}")
    z = ad.matmul(h_in, w.T)
    alpha = edge_attention(z, plan, params[f"{prefix}.a"], heads, edge_repr, params.get(f"{prefix}.W_e"))
    if trace is not None:
        trace[f"{prefix}.alpha"] = alpha.data
    agg = ad.head_aggregate(alpha, z, plan.dst, plan.src.ids, heads)
    out = ad.elu(agg + ad.matmul(h_in, w_r.T))
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"{prefix}: non-finite activations")
    return out


def fuse(h: Tensor, hq: Tensor, u: Tensor, u_q: Tensor, trace: dict | None = None, key: str = "beta") -> Tensor:
    """Per-node two-way softmax mix of the heterogeneous and query rows."""
    if h.shape != hq.shape:
        raise ad.ShapeError(f"fuse: shapes differ, {h.shape} vs {hq.shape}")
    # softmax over two logits == sigmoid of their difference
    beta = ad.sigmoid(ad.matmul(h, u) - ad.matmul(hq, u_q))
    if trace is not None:
        trace[key] = beta.data
    return beta * h + (1.0 - beta) * hq


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask


def _edge_repr(params: dict[str, Tensor], plan: MessagePlan, config: ModelConfig) -> Tensor | None:
    if not config.edge_semantic:
        return None
    if "edge_embedding" in params:
        return params["edge_embedding"]
    return Tensor(plan.edge_features)


def restrict_plan(plan: MessagePlan, rows: np.ndarray) -> MessagePlan:
    """Keep only the edges whose destination is flagged in the boolean ``rows``.

    Destination rows that stay keep all of their edges in the original order,
    so their layer outputs are unchanged; other rows only get the residual.
    """
    keep = rows[plan.dst.ids]
    if keep.all():
        return plan
    return MessagePlan(
        num_nodes=plan.num_nodes,
        dst=Segments.from_ids(plan.dst.ids[keep], plan.num_nodes),
        src=Segments.from_ids(plan.src.ids[keep], plan.num_nodes),
        etype=plan.etype[keep],
        etype_seg=Segments.from_ids(plan.etype[keep], plan.etype_seg.count),
        edge_features=None if plan.edge_features is None else plan.edge_features[keep],
        feature_perm=plan.feature_perm,
        type_features=plan.type_features,
    )


def layer_plans(plan: MessagePlan, layers: int, needed=None) -> list[MessagePlan]:
    """Per-layer plans computing just what the ``needed`` output rows depend on.

    Layer ``L-1`` needs the ``needed`` rows, and each earlier layer needs the
    rows of the next one plus their neighbors.  ``needed=None`` keeps every row.
    """
    if needed is None:
        return [plan] * layers
    rows = np.zeros(plan.num_nodes, dtype=bool)
    rows[np.asarray(needed, dtype=np.int64)] = True
    plans = []
    for _ in range(layers):
        plans.append(restrict_plan(plan, rows))
        grown = rows.copy()
        grown[plan.src.ids[rows[plan.dst.ids]]] = True
        rows = grown
    return plans[::-1]


def hetero_states(
    params: dict[str, Tensor],
    config: ModelConfig,
    graph: HeteroGraph,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
    plans: list[MessagePlan] | None = None,
) -> list[Tensor]:
    """Outputs ``h^1..h^L`` of the query-independent stack."""
    if "het" not in _encoder_names(config):
        return []
    plan = message_plan(graph, config.use_edge_features)
    plans = plans or layer_plans(plan, config.layers)
    edge_repr = _edge_repr(params, plan, config)
    h = project_features(graph, params, plan)
    states = []
    for l in range(config.layers):
        h = encoder_layer(plans[l], _dropout(h, config.dropout, rng), params, f"het.{l}", config.heads, edge_repr, trace)
        states.append(h)
    return states


def forward(
    params: dict[str, Tensor],
    config: ModelConfig,
    graph: HeteroGraph,
    q: int,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
    hetero: list[Tensor] | None = None,
    needed=None,
) -> Tensor:
    """``(n, 1)`` membership probabilities for query ``q``.

    Passing ``rng`` enables dropout (training).  ``hetero`` reuses precomputed
    heterogeneous-stack outputs for the same graph and parameters.  With
    ``needed`` the result holds just those nodes' rows, in that order, and
    message passing that cannot reach them is skipped.
    """
    plan = message_plan(graph, config.use_edge_features)
    plans = layer_plans(plan, config.layers, needed)
    edge_repr = _edge_repr(params, plan, config)
    if hetero is None:
        hetero = hetero_states(params, config, graph, rng, trace, plans)
    encs = _encoder_names(config)
    hq_in = Tensor(query_indicator(graph, q))
    out = None
    for l in range(config.layers):
        if "qry" in encs:
            x = hq_in if l == 0 else _dropout(hq_in, config.dropout, rng)
            hq = encoder_layer(plans[l], x, params, f"qry.{l}", config.heads, edge_repr, trace)
        if config.encoders == "both":
            out = fuse(hetero[l], hq, params[f"fuse.{l}.u"], params[f"fuse.{l}.u_q"], trace, f"fuse.{l}.beta")
            hq_in = out
        elif config.encoders == "query":
            out = hq_in = hq
        else:
            out = hetero[l]
    if needed is not None:
        out = ad.gather_rows(out, np.asarray(needed, dtype=np.int64))
    hidden = ad.elu(ad.matmul(out, params["mlp.W1"].T) + params["mlp.b1"])
    logits = ad.matmul(hidden, params["mlp.W2"].T) + params["mlp.b2"]
    p = ad.sigmoid(logits)
    if not np.all(np.isfinite(p.data)):
        raise FloatingPointError("forward: non-finite probabilities")
    return p


def predict(params, config: ModelConfig, graph: HeteroGraph, q: int, hetero: list[Tensor] | None = None) -> np.ndarray:
    """Inference-mode probabilities as a flat array."""
    return forward(params, config, graph, q, hetero=hetero).data[:, 0].copy()


# -- checkpoints -----------------------------------------------------------------
@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    config: ModelConfig
    signature: GraphSignature
    seed: int
    gamma: float | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    """JSON header plus every parameter as a named flat float64 list."""
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "signature": ckpt.signature.to_dict(),
        "seed": ckpt.seed,
        "gamma": ckpt.gamma,
        "meta": ckpt.meta,
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()} for name, t in ckpt.params.items()
        },
    }
    Path(path).write_text(json.dumps(body, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if raw.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {raw.get('version')}")
    config = ModelConfig(**raw["config"])
    sig = GraphSignature.from_dict(raw["signature"])
    params = {}
    for name, entry in raw["params"].items():
        data = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise ValueError(f"{path}: parameter {name!r} has {data.size} values for shape {shape}")
        params[name] = Tensor(data.reshape(shape), requires_grad=True, name=name)
    ordered = {k: params[k] for k in param_shapes(config, sig) if k in params}
    ordered.update({k: v for k, v in params.items() if k not in ordered})
    check_params(ordered, config, sig)
    return Checkpoint(ordered, config, sig, int(raw["seed"]), raw.get("gamma"), raw.get("meta", {}))


def check_compatible(sig: GraphSignature, graph: HeteroGraph, use_edge_features: bool = True) -> None:
    have = GraphSignature.of(graph, use_edge_features)
    if have != sig:
        raise ValueError(f"graph does not match checkpoint: checkpoint {sig.to_dict()} vs graph {have.to_dict()}")
