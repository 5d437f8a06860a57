"""Sparse (row-lazy) Adam and the epoch/batch training loop with best-checkpoint selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .data import SplitBundle, sample_negatives, spawn_rngs
from .errors import ConfigError, TrainingError, NumericError
from .losses import BatchSample, LossSpec, batch_loss_and_grads
from .metrics import evaluate_targets
from .model import EmbeddingModel, LightGCNGraph, apply_norm_floor, forward_tables, init_embeddings

log = logging.getLogger(__name__)

SELECT_ON = ("auto", "validation", "test", "train")


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float, weight_decay: float = 0.0) -> "AdamState":
        if not lr > 0:
            raise ConfigError("lr must be positive")
        if weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        return cls(lr=lr, weight_decay=weight_decay,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict, grads: dict, diagnostics: str = "") -> dict:
    """One Adam step on the touched rows only; ``grads`` maps name -> (rows, row_grads).

    The step counter is global, so bias correction uses the same t for every
    row even if a row was skipped on earlier steps. Weight decay is an L2 term
    added to the gradient before the moment updates.
    """
    for name, (rows, g) in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {name!r} {diagnostics}".strip())
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, (rows, g) in grads.items():
        p, m, v = params[name], state.m[name], state.v[name]
        if state.weight_decay:
            g = g + state.weight_decay * p[rows]
        m_r = state.beta1 * m[rows] + (1.0 - state.beta1) * g
        v_r = state.beta2 * v[rows] + (1.0 - state.beta2) * (g * g)
        m[rows] = m_r
        v[rows] = v_r
        p[rows] -= state.lr * (m_r / bc1) / (np.sqrt(v_r / bc2) + state.eps)
        apply_norm_floor(p, rows)
    return params


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 1024
    epochs: int = 200
    n_negatives: int = 1000
    seed: int = 0
    eval_every: int = 1
    dim: int = 64
    noise_ratio_p: float = 0.0
    select_on: str = "auto"
    eval_k: int = 20

    def __post_init__(self):
        for name in ("batch_size", "n_negatives", "eval_every", "dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.select_on not in SELECT_ON:
            raise ConfigError(f"select_on must be one of {SELECT_ON}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: EmbeddingModel
    history: list
    best_epoch: Optional[int]
    best_ndcg: Optional[float]
    select_on: str

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_recall@20,val_ndcg@20"]
        for row in self.history:
            lines.append(f"{row['epoch']},{row['train_loss']!r},{row['recall']!r},{row['ndcg']!r}")
        return "\n".join(lines) + "\n"


def _selection_target(split: SplitBundle, select_on: str):
    if select_on == "auto":
        if split.validation is not None and split.validation.n_interactions:
            select_on = "validation"
        elif split.setting_tag == "ood":
            select_on = "test"
        else:
            raise ConfigError(f"{split.setting_tag} split has no validation set to select on")
    if select_on == "validation":
        if split.validation is None or not split.validation.n_interactions:
            raise ConfigError("validation set is empty")
        return "validation", split.validation, [split.train, split.noise_pool]
    if select_on == "test":
        exclude = [split.train, split.noise_pool]
        if split.validation is not None:
            exclude.append(split.validation)
        return "test", split.test, exclude
    return "train", split.train, []


def sample_batch(split: SplitBundle, users, positives, n_neg: int, p: float, rng) -> BatchSample:
    negs = np.empty((len(users), n_neg), dtype=np.int64)
    for a, u in enumerate(users.tolist()):
        negs[a] = sample_negatives(split, u, n_neg, p, rng)
    return BatchSample.from_negatives(users, positives, negs)


def train(split: SplitBundle, spec: LossSpec, cfg: TrainConfig, backbone: str = "mf",
          layers: int = 2, init: Optional[EmbeddingModel] = None) -> TrainResult:
    """Train embeddings with ``spec`` and return the best checkpoint by NDCG@K on the selection set."""
    if split.train.n_interactions == 0:
        raise ConfigError("training set is empty")
    select_name, target, exclude = _selection_target(split, cfg.select_on)
    init_rng, shuffle_rng, neg_rng = spawn_rngs(cfg.seed, 3)
    if init is None:
        model = init_embeddings(split.n_users, split.n_items, cfg.dim, init_rng, backbone,
                                layers if backbone == "lightgcn" else 0)
    else:
        model = init.copy()
    graph = LightGCNGraph(split.train, model.layers) if model.backbone == "lightgcn" else None
    users_all, items_all = split.train.pairs()
    params = {"user": model.user_emb, "item": model.item_emb}
    state = AdamState.for_params(params, cfg.lr, cfg.weight_decay)
    history: list = []
    best = model.copy()
    best_epoch, best_ndcg = None, None

    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(users_all.size)
        losses = []
        for b, s in enumerate(range(0, perm.size, cfg.batch_size)):
            idx = perm[s:s + cfg.batch_size]
            batch = sample_batch(split, users_all[idx], items_all[idx], cfg.n_negatives, cfg.noise_ratio_p, neg_rng)
            src = forward_tables(model, graph)
            try:
                loss, g = batch_loss_and_grads(src, batch, spec)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            if graph is not None:
                gu, gi = g.to_dense(model.n_users, model.n_items, model.dim)
                gu, gi = graph.backprop(gu, gi)
                ur = np.flatnonzero(np.any(gu != 0, axis=1))
                ir = np.flatnonzero(np.any(gi != 0, axis=1))
                grads = {"user": (ur, gu[ur]), "item": (ir, gi[ir])}
            else:
                grads = {"user": (g.user_rows, g.user_grad), "item": (g.item_rows, g.item_grad)}
            adam_step(state, params, grads, diagnostics=f"(epoch {epoch}, batch {b}, loss {loss!r})")
            losses.append(loss)
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"epoch {epoch}: training loss diverged ({epoch_loss})")
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            rep = evaluate_targets(forward_tables(model, graph), target, exclude, (cfg.eval_k,))
            row = {"epoch": epoch, "train_loss": epoch_loss,
                   "recall": rep.recall(cfg.eval_k), "ndcg": rep.ndcg(cfg.eval_k)}
            history.append(row)
            log.debug("epoch %d loss %.5f %s ndcg@%d %.4f", epoch, epoch_loss, select_name, cfg.eval_k, row["ndcg"])
            if best_ndcg is None or row["ndcg"] > best_ndcg:
                best_ndcg, best_epoch = row["ndcg"], epoch
                best = model.copy()
    return TrainResult(best, history, best_epoch, best_ndcg, select_name)
