"""scikit-learn style wrapper around training, prediction and search."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import CommunityResult, HeteroGraph, QueryTask
from .metrics import evaluate
from .model import Checkpoint, ModelConfig, check_compatible, load_checkpoint, predict, save_checkpoint
from .search import SearchConfig, search
from .trainer import TrainConfig, train
from .validation import check_fanouts, check_graph, check_query, check_tasks, resolve_types


class CommunitySearch(BaseEstimator):
    """Query-driven community search on a heterogeneous graph.

    ``fit`` learns from :class:`QueryTask` supervision; ``predict`` returns the
    community of one query node.  Hyperparameters mirror :class:`ModelConfig`
    and :class:`TrainConfig`.

    >>> est = CommunitySearch(epochs=5).fit(graph, tasks)      # doctest: +SKIP
    >>> est.predict(graph, 17, target_types="author,paper")     # doctest: +SKIP
    """

    def __init__(
        self,
        mode: str = "ls",
        layers: int = 2,
        hidden: int = 64,
        heads: int = 8,
        unified_dim: int = 64,
        edge_dim: int = 16,
        dropout: float = 0.5,
        edge_semantic: bool = True,
        encoders: str = "both",
        lr: float = 1e-3,
        weight_decay: float = 1e-4,
        epochs: int = 30,
        patience: int = 5,
        fanouts: Sequence[int] = (20, 10),
        split: Sequence[float] = (0.7, 0.15, 0.15),
        seed: int = 0,
        gamma: float | None = None,
        d_max: float = math.inf,
    ):
        self.mode = mode
        self.layers = layers
        self.hidden = hidden
        self.heads = heads
        self.unified_dim = unified_dim
        self.edge_dim = edge_dim
        self.dropout = dropout
        self.edge_semantic = edge_semantic
        self.encoders = encoders
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.patience = patience
        self.fanouts = fanouts
        self.split = split
        self.seed = seed
        self.gamma = gamma
        self.d_max = d_max

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        mcfg = ModelConfig(
            layers=self.layers, hidden=self.hidden, heads=self.heads, unified_dim=self.unified_dim,
            edge_dim=self.edge_dim, dropout=self.dropout, edge_semantic=self.edge_semantic, encoders=self.encoders,
        )
        tcfg = TrainConfig(
            mode=self.mode, epochs=self.epochs, patience=self.patience, lr=self.lr, weight_decay=self.weight_decay,
            fanouts=check_fanouts(self.fanouts, self.layers), split=tuple(self.split), seed=self.seed,
        )
        return mcfg, tcfg

    def fit(self, graph: HeteroGraph, tasks: Sequence[QueryTask], checkpoint_path=None) -> "CommunitySearch":
        check_graph(graph)
        tasks = check_tasks(graph, tasks)
        mcfg, tcfg = self._configs()
        self.report_, self.checkpoint_ = train(graph, tasks, mcfg, tcfg, checkpoint_path)
        self.gamma_ = self.checkpoint_.gamma
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint | str) -> "CommunitySearch":
        ckpt = load_checkpoint(checkpoint) if not isinstance(checkpoint, Checkpoint) else checkpoint
        c = ckpt.config
        tc = ckpt.meta.get("train_config", {})
        est = cls(
            layers=c.layers, hidden=c.hidden, heads=c.heads, unified_dim=c.unified_dim, edge_dim=c.edge_dim,
            dropout=c.dropout, edge_semantic=c.edge_semantic, encoders=c.encoders, seed=ckpt.seed,
            **{k: (tuple(v) if isinstance(v, list) else v) for k, v in tc.items()
               if k in ("mode", "lr", "weight_decay", "epochs", "patience", "fanouts", "split")},
        )
        est.checkpoint_ = ckpt
        est.gamma_ = ckpt.gamma
        return est

    def save(self, path) -> None:
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(path, self.checkpoint_)

    def predict_proba(self, graph: HeteroGraph, q: int) -> np.ndarray:
        """Membership probability of every node for query ``q``."""
        check_is_fitted(self, "checkpoint_")
        ck = self.checkpoint_
        check_compatible(ck.signature, graph, ck.config.use_edge_features)
        return predict(ck.params, ck.config, graph, check_query(graph, q))

    def _gamma(self) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return float(self.gamma_) if self.gamma_ is not None else 0.5

    def predict(self, graph: HeteroGraph, q: int, target_types=None, connectivity: bool = False) -> CommunityResult:
        """Community of ``q`` restricted to ``target_types`` (default: the query's own type)."""
        q = check_query(graph, q)
        types = resolve_types(graph, target_types) if target_types is not None else frozenset({int(graph.node_type[q])})
        probs = self.predict_proba(graph, q)
        return search(graph, q, probs, SearchConfig(self._gamma(), self.d_max, types), connectivity)

    def score(self, graph: HeteroGraph, tasks: Sequence[QueryTask], communities=None) -> float:
        """Mean F1 over ``tasks`` at this estimator's ``gamma`` and ``d_max``."""
        check_is_fitted(self, "checkpoint_")
        tasks = check_tasks(graph, tasks)
        rep = evaluate(graph, self.checkpoint_, tasks, self._gamma(), self.d_max, communities)
        return rep.mean["f1"]
