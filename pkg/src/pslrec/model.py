"""Embedding backbones (MF, LightGCN) and the half-cosine score."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .errors import ConfigError, NumericError

NORM_FLOOR = 1e-8
BACKBONES = ("mf", "lightgcn")


@dataclass
class EmbeddingModel:
    user_emb: np.ndarray
    item_emb: np.ndarray
    backbone: str = "mf"
    layers: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.user_emb.shape[1] != self.item_emb.shape[1]:
            raise ConfigError("user and item embeddings must share a dimension")

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.user_emb.copy(), self.item_emb.copy(), self.backbone, self.layers)


@dataclass
class PropagatedEmbeddings:
    user_out: np.ndarray
    item_out: np.ndarray


def tables(m) -> tuple[np.ndarray, np.ndarray]:
    """(user, item) matrices that scores are computed from."""
    if isinstance(m, PropagatedEmbeddings):
        return m.user_out, m.item_out
    return m.user_emb, m.item_emb


def init_embeddings(n_users: int, n_items: int, d: int, rng: np.random.Generator,
                    backbone: str = "mf", layers: int = 0) -> EmbeddingModel:
    if d < 1:
        raise ConfigError("embedding dimension must be >= 1")
    user = rng.normal(0.0, 0.1, size=(n_users, d))
    item = rng.normal(0.0, 0.1, size=(n_items, d))
    apply_norm_floor(user)
    apply_norm_floor(item)
    return EmbeddingModel(user, item, backbone, layers if backbone == "lightgcn" else 0)


def apply_norm_floor(mat: np.ndarray, rows: Optional[np.ndarray] = None) -> None:
    """Rescale rows whose norm fell below NORM_FLOOR up to the floor (in place)."""
    sub = mat if rows is None else mat[rows]
    norms = np.linalg.norm(sub, axis=1)
    low = norms < NORM_FLOOR
    if not low.any():
        return
    fix = sub[low]
    n = norms[low]
    zero = n == 0
    fix[zero, 0] = NORM_FLOOR
    fix[~zero] *= (NORM_FLOOR / n[~zero])[:, None]
    if rows is None:
        mat[low] = fix
    else:
        mat[np.asarray(rows)[low]] = fix


def _norm(x: np.ndarray) -> float:
    n = float(np.linalg.norm(x))
    if not n > 0:
        raise NumericError("zero-norm embedding row; cosine score undefined")
    return n


def score(m, u: int, i: int) -> float:
    """Half cosine similarity between user u and item i, in [-0.5, 0.5]."""
    U, V = tables(m)
    a, b = U[u], V[i]
    return 0.5 * float(a @ b) / (_norm(a) * _norm(b))


def score_grad(m, u: int, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``score`` with respect to the user row and the item row."""
    U, V = tables(m)
    a, b = U[u], V[i]
    na, nb = _norm(a), _norm(b)
    dot = float(a @ b)
    ga = 0.5 * (b / (na * nb) - dot * a / (na ** 3 * nb))
    gb = 0.5 * (a / (na * nb) - dot * b / (nb ** 3 * na))
    return ga, gb


def score_matrix(m, users: Optional[np.ndarray] = None) -> np.ndarray:
    """Scores of the given users (default all) against every item."""
    U, V = tables(m)
    if users is not None:
        U = U[users]
    un = np.linalg.norm(U, axis=1, keepdims=True)
    vn = np.linalg.norm(V, axis=1, keepdims=True)
    if (un <= 0).any() or (vn <= 0).any():
        raise NumericError("zero-norm embedding row; cosine score undefined")
    return 0.5 * (U / un) @ (V / vn).T


# --------------------------------------------------------------------------- LightGCN


class LightGCNGraph:
    """Symmetric-normalised user-item adjacency with the mean-of-powers propagation operator.

    Node order is users first, then items. Isolated nodes pass their layer-0
    embedding through unchanged; the operator stays self-adjoint.
    """

    def __init__(self, train: Dataset, layers: int):
        if layers < 0:
            raise ConfigError("layers must be >= 0")
        self.layers = layers
        self.n_users, self.n_items = train.n_users, train.n_items
        users, items = train.pairs()
        n = self.n_users + self.n_items
        du = np.bincount(users, minlength=self.n_users).astype(float)
        di = np.bincount(items, minlength=self.n_items).astype(float)
        w = 1.0 / np.sqrt(du[users] * di[items]) if users.size else np.zeros(0)
        rows = np.concatenate([users, items + self.n_users])
        cols = np.concatenate([items + self.n_users, users])
        self.adj = sp.csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))
        self.isolated = np.concatenate([du, di]) == 0

    def _apply(self, x: np.ndarray) -> np.ndarray:
        acc = x.copy()
        cur = x
        for _ in range(self.layers):
            cur = self.adj @ cur
            acc += cur
        out = acc / (self.layers + 1)
        out[self.isolated] = x[self.isolated]
        return out

    def propagate(self, m: EmbeddingModel) -> PropagatedEmbeddings:
        out = self._apply(np.vstack([m.user_emb, m.item_emb]))
        return PropagatedEmbeddings(out[: self.n_users], out[self.n_users:])

    def backprop(self, grad_user: np.ndarray, grad_item: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self._apply(np.vstack([grad_user, grad_item]))
        return out[: self.n_users], out[self.n_users:]


def lightgcn_propagate(m: EmbeddingModel, train: Dataset) -> PropagatedEmbeddings:
    if m.backbone != "lightgcn":
        raise ConfigError("lightgcn_propagate needs a LightGCN model")
    return LightGCNGraph(train, m.layers).propagate(m)


def lightgcn_backprop(grad: PropagatedEmbeddings, train: Dataset, layers: int) -> tuple[np.ndarray, np.ndarray]:
    return LightGCNGraph(train, layers).backprop(grad.user_out, grad.item_out)


def forward_tables(m: EmbeddingModel, graph: Optional[LightGCNGraph] = None):
    """What scores are computed from: the model itself (MF) or its propagation (LightGCN)."""
    if m.backbone == "mf":
        return m
    if graph is None:
        raise ConfigError("LightGCN scoring needs the training graph")
    return graph.propagate(m)


# --------------------------------------------------------------------------- checkpoints


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(m: EmbeddingModel, path, manifest: Optional[dict] = None) -> Path:
    path = Path(path)
    payload = {
        "backbone": m.backbone,
        "layers": m.layers,
        "dim": m.dim,
        "n_users": m.n_users,
        "n_items": m.n_items,
        "manifest": manifest or {},
        "user_emb": m.user_emb.tolist(),
        "item_emb": m.item_emb.tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path) -> tuple[EmbeddingModel, dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    user = np.asarray(payload["user_emb"], dtype=float).reshape(payload["n_users"], payload["dim"])
    item = np.asarray(payload["item_emb"], dtype=float).reshape(payload["n_items"], payload["dim"])
    return EmbeddingModel(user, item, payload["backbone"], payload["layers"]), payload.get("manifest", {})
