"""Training loop, loss, task splitting and threshold selection."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .graph import HeteroGraph, QueryTask
from .model import (
    Checkpoint,
    GraphSignature,
    ModelConfig,
    forward,
    hetero_states,
    init_params,
    predict,
    save_checkpoint,
)
from .sampler import sample_block

log = logging.getLogger(__name__)

CLAMP = 1e-12
MODES = ("full", "ls")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "ls"
    epochs: int = 30
    patience: int = 5
    lr: float = 1e-3
    weight_decay: float = 1e-4
    fanouts: tuple[int, ...] = (20, 10)
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.patience < 1 or self.epochs < 1:
            raise ValueError("epochs and patience must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {self.split}")
        object.__setattr__(self, "fanouts", tuple(int(f) for f in self.fanouts))
        if not self.fanouts or min(self.fanouts) < 1:
            raise ValueError(f"fanouts must be positive integers, got {self.fanouts}")
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_f1: float = 0.0
    gamma: float = 0.5
    checkpoint_path: str | None = None
    epoch_ms: list[float] = field(default_factory=list)
    splits: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timings."""
        out = self.to_json()
        out.pop("epoch_ms")
        return out


def bce_loss(probabilities: Tensor, labels, labeled_ids) -> Tensor:
    """Mean binary cross entropy over the labeled rows, with clamped probabilities."""
    labeled_ids = np.asarray(labeled_ids, dtype=np.int64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if labeled_ids.size == 0:
        raise ValueError("bce_loss: empty labeled set")
    if y.shape[0] != labeled_ids.size:
        raise ValueError(f"bce_loss: {y.shape[0]} labels for {labeled_ids.size} labeled nodes")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce_loss: labels must be 0 or 1")
    p = probabilities if probabilities.data.ndim == 2 else Tensor(probabilities.data.reshape(-1, 1))
    p = ad.clip(ad.gather_rows(p, labeled_ids), CLAMP, 1.0 - CLAMP)
    return -ad.mean(y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p))


def split_tasks(n: int, ratios: Sequence[float], seed: int) -> tuple[list[int], list[int], list[int]]:
    """Deterministic shuffled train/val/test index lists."""
    perm = np.random.default_rng([seed, 0x5EED]).permutation(n).tolist()
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    if n >= 3 and ratios[1] > 0 and n_val == 0:
        n_val = 1
        n_train = min(n_train, n - 1)
    return sorted(perm[:n_train]), sorted(perm[n_train:n_train + n_val]), sorted(perm[n_train + n_val:])


def _task_f1_curve(probs: np.ndarray, labels: np.ndarray, cands: np.ndarray) -> np.ndarray:
    pred = probs[None, :] > cands[:, None]
    truth = labels[None, :] > 0.5
    tp = (pred & truth).sum(axis=1)
    denom = pred.sum(axis=1) + truth.sum()
    return np.where(denom == 0, 1.0, 2.0 * tp / np.maximum(denom, 1))


def select_threshold(val_probabilities: Sequence[np.ndarray], val_labels: Sequence[np.ndarray]) -> tuple[float, float]:
    """Pick ``gamma`` maximizing mean per-task F1 of ``p > gamma``.

    Candidates are midpoints between consecutive distinct values of the pooled
    probabilities together with 0 and 1.  Ties go to the smallest candidate.
    Returns ``(gamma, mean F1)``.
    """
    if not val_probabilities:
        raise ValueError("select_threshold: empty validation set")
    pooled = np.unique(np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in val_probabilities] + [np.array([0.0, 1.0])]))
    cands = (pooled[:-1] + pooled[1:]) / 2.0 if pooled.size > 1 else pooled
    score = np.zeros(cands.size)
    for p, y in zip(val_probabilities, val_labels):
        score += _task_f1_curve(np.asarray(p, dtype=np.float64).ravel(), np.asarray(y).ravel(), cands)
    score /= len(val_probabilities)
    best = int(np.argmax(score))
    return float(cands[best]), float(score[best])


def _params_finite_report(params: dict[str, Tensor]) -> str:
    return ", ".join(f"{k}={np.linalg.norm(v.data):.3g}" for k, v in params.items())


def train_step(params, opt: Adam, model_config: ModelConfig, graph: HeteroGraph, task: QueryTask,
               train_config: TrainConfig, rng: np.random.Generator) -> float:
    """Forward, backward and one Adam update for a single task; returns the loss."""
    if train_config.mode == "ls":
        block = sample_block(graph, task, train_config.fanouts, rng)
        g, q = block.graph, int(block.to_local([task.query])[0])
        lab = block.labeled
    else:
        g, q, lab = graph, task.query, task.labeled
    opt.zero_grad()
    p = forward(params, model_config, g, q, rng=rng if model_config.dropout > 0 else None, needed=lab)
    loss = bce_loss(p, task.labels_for(task.labeled), np.arange(lab.size))
    ad.backward(loss)
    opt.step()
    return loss.item()


def validation_scores(params, model_config: ModelConfig, graph: HeteroGraph, tasks: Sequence[QueryTask]):
    """Probabilities and labels on each task's labeled nodes, and the mean loss."""
    cache = hetero_states(params, model_config, graph)
    probs, labels, losses = [], [], []
    for task in tasks:
        p = predict(params, model_config, graph, task.query, hetero=cache)
        lab = task.labeled
        y = task.labels_for(lab)
        pl = np.clip(p[lab], CLAMP, 1 - CLAMP)
        losses.append(float(-np.mean(y * np.log(pl) + (1 - y) * np.log(1 - pl))))
        probs.append(p[lab])
        labels.append(y)
    return probs, labels, float(np.mean(losses)) if losses else float("nan")


def train(
    graph: HeteroGraph,
    tasks: Sequence[QueryTask],
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    checkpoint_path: str | os.PathLike | None = None,
) -> tuple[TrainReport, Checkpoint]:
    """Fit parameters with one Adam step per training task per epoch.

    Tasks are split by ``train_config.seed``.  After every epoch ``gamma`` is
    re-selected on the validation tasks; the epoch with the best validation F1
    (ties: lower validation loss) is kept, and training stops after
    ``patience`` epochs without improvement.
    """
    mcfg = model_config or ModelConfig()
    tcfg = train_config or TrainConfig()
    if not tasks:
        raise ValueError("no training tasks")
    if tcfg.mode == "ls" and len(tcfg.fanouts) != mcfg.layers:
        raise ValueError(f"need one fanout per layer ({mcfg.layers}), got {len(tcfg.fanouts)}")
    for t in tasks:
        t.check(graph)
    train_idx, val_idx, test_idx = split_tasks(len(tasks), tcfg.split, tcfg.seed)
    if not train_idx:
        raise ValueError("split leaves no training tasks")
    val_tasks = [tasks[i] for i in (val_idx or train_idx)]
    sig = GraphSignature.of(graph, mcfg.use_edge_features)
    params = init_params(mcfg, sig, tcfg.seed)
    opt = Adam(params, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    report = TrainReport(splits={"train": train_idx, "val": val_idx, "test": test_idx})
    order_rng = np.random.default_rng([tcfg.seed, 1])
    best_key = (-1.0, 0.0)
    best_state = None
    stale = 0
    for epoch in range(tcfg.epochs):
        t0 = time.perf_counter()
        losses = []
        for ti in order_rng.permutation(train_idx).tolist():
            rng = np.random.default_rng([tcfg.seed, epoch, ti])
            try:
                loss = train_step(params, opt, mcfg, graph, tasks[ti], tcfg, rng)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, task {ti}: {exc}; parameter norms: {_params_finite_report(params)}") from exc
            if not math.isfinite(loss):
                raise TrainingError(f"epoch {epoch}, task {ti}: non-finite loss; parameter norms: {_params_finite_report(params)}")
            losses.append(loss)
        probs, labels, vloss = validation_scores(params, mcfg, graph, val_tasks)
        gamma, vf1 = select_threshold(probs, labels)
        ms = (time.perf_counter() - t0) * 1000.0
        report.losses.append(float(np.mean(losses)))
        report.val_f1.append(vf1)
        report.val_loss.append(vloss)
        report.epoch_ms.append(ms)
        log.info("epoch=%d loss=%.6f valF1=%.4f gamma=%.4f ms=%.0f", epoch, report.losses[-1], vf1, gamma, ms)
        key = (vf1, -vloss)
        if key > best_key:
            best_key = key
            best_state = {k: v.data.copy() for k, v in params.items()}
            report.best_epoch, report.best_val_f1, report.gamma = epoch, vf1, gamma
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    for k, v in params.items():
        v.data = best_state[k]
        v.grad = None
    ckpt = Checkpoint(
        params=params,
        config=mcfg,
        signature=sig,
        seed=tcfg.seed,
        gamma=report.gamma,
        meta={"train_config": tcfg.to_dict(), "best_epoch": report.best_epoch, "splits": report.splits},
    )
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, ckpt)
        report.checkpoint_path = str(checkpoint_path)
    return report, ckpt
