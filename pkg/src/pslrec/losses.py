"""PSL / SL / BPR / BSL losses over sampled candidate sets, with analytic gradients.

All losses act on score gaps ``d = f(u, j) - f(u, i)`` between a candidate j
and the anchor positive i. Gradients are pushed through the half-cosine score
to the embedding rows that took part in the batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .activations import Activation, as_activation, dlog_value, log_value, act_deriv, act_value
from .errors import ConfigError, NumericError
from .model import tables

KINDS = ("PSL", "SL", "BPR", "BSL")
PLACEMENTS = ("outside", "inside")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "PSL"
    activation: Optional[Activation] = None  # default: exp, or softplus_style for BPR
    tau: float = 0.2
    tau1: float = 0.25
    tau2: float = 0.2
    placement: str = "outside"

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        act = self.activation
        if act is None:
            act = Activation.SOFTPLUS if kind == "BPR" else Activation.EXP
        object.__setattr__(self, "activation", as_activation(act))
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}")
        for name in ("tau", "tau1", "tau2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if kind in ("SL", "BSL"):
            # SL is PSL(exp, outside); BSL wraps SL
            object.__setattr__(self, "activation", Activation.EXP)
            object.__setattr__(self, "placement", "outside")
        if kind == "BSL":
            object.__setattr__(self, "tau", self.tau2)

    @property
    def is_sl_equivalent(self) -> bool:
        return self.kind == "SL" or (
            self.kind == "PSL" and self.activation is Activation.EXP and self.placement == "outside")

    @property
    def label(self) -> str:
        if self.kind == "PSL":
            suffix = "" if self.placement == "outside" else "-inside"
            return f"PSL-{self.activation.value}{suffix}"
        if self.kind == "BPR" and self.activation is not Activation.SOFTPLUS:
            return f"BPR-{self.activation.value}"
        return self.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "activation": self.activation.value, "tau": self.tau,
                "tau1": self.tau1, "tau2": self.tau2, "placement": self.placement}


def sl_spec(tau: float) -> LossSpec:
    return LossSpec("SL", Activation.EXP, tau=tau)


def psl_spec(activation, tau: float, placement: str = "outside") -> LossSpec:
    return LossSpec("PSL", activation, tau=tau, placement=placement)


# --------------------------------------------------------------------------- scalar ops


def pair_gap(f_uj: float, f_ui: float) -> float:
    return f_uj - f_ui


def _psl_logits(gaps, spec: LossSpec):
    if spec.placement == "outside":
        return log_value(spec.activation, gaps) / spec.tau
    return log_value(spec.activation, gaps / spec.tau)


def _psl_dlogits(gaps, spec: LossSpec):
    if spec.placement == "outside":
        return dlog_value(spec.activation, gaps) / spec.tau
    return dlog_value(spec.activation, gaps / spec.tau) / spec.tau


def psl_anchor_loss(gaps: Sequence[float], spec: LossSpec) -> float:
    """log sum_j sigma(d_j)^(1/tau) (outside) or log sum_j sigma(d_j / tau) (inside).

    ``gaps`` must contain the self-gap 0 of the anchor positive.
    """
    if spec.kind not in ("PSL", "SL"):
        raise ConfigError("psl_anchor_loss expects a PSL or SL spec")
    z = _psl_logits(np.asarray(gaps, dtype=float), spec)
    val = float(logsumexp(z))
    if not np.isfinite(val):
        raise NumericError(f"non-finite PSL anchor loss ({val})")
    return val


def bpr_anchor_loss(gaps: Sequence[float], activation=Activation.SOFTPLUS) -> float:
    """sum_j log sigma(d_j) over negatives; the default sigma makes each term softplus(d_j)."""
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size == 0:
        return 0.0
    return float(np.sum(log_value(activation, gaps)))


def bsl_user_loss(anchor_losses: Sequence[float], tau1: float) -> float:
    """tau1 * log mean_i exp(l_i / tau1) over a user's per-positive SL losses."""
    ls = np.asarray(anchor_losses, dtype=float)
    if ls.size == 0:
        return 0.0
    val = float(tau1 * (logsumexp(ls / tau1) - np.log(ls.size)))
    if not np.isfinite(val):
        raise NumericError("non-finite BSL loss")
    return val


def pair_weight(spec: LossSpec, d):
    """Unnormalised gradient weight sigma'(d) * sigma(d)^(1/tau - 1) / tau."""
    if spec.placement != "outside":
        raise ConfigError("pair weights are defined for the outside placement")
    d = np.asarray(d, dtype=float)
    if spec.activation is Activation.EXP:
        w = np.exp(d / spec.tau) / spec.tau
    else:
        sig = act_value(spec.activation, d)
        w = act_deriv(spec.activation, d) * np.exp((1.0 / spec.tau - 1.0) * np.log(sig)) / spec.tau
    return w if w.ndim else float(w)


def normalized_pair_weights(gaps, spec: LossSpec) -> np.ndarray:
    """d L / d d_j for one anchor: softmax of sigma^(1/tau) times the log-derivative chain."""
    gaps = np.asarray(gaps, dtype=float)
    z = _psl_logits(gaps, spec)
    p = np.exp(z - logsumexp(z))
    return p * _psl_dlogits(gaps, spec)


# --------------------------------------------------------------------------- batches


@dataclass
class BatchSample:
    """Anchors (user, positive) with per-anchor candidate lists (negatives plus the positive).

    Ragged candidate lists are padded; ``mask`` marks real entries and
    ``self_pos`` the column holding the anchor positive.
    """

    users: np.ndarray
    positives: np.ndarray
    candidates: np.ndarray
    mask: np.ndarray
    self_pos: np.ndarray

    @classmethod
    def build(cls, users, positives, candidates) -> "BatchSample":
        users = np.asarray(users, dtype=np.int64)
        positives = np.asarray(positives, dtype=np.int64)
        if isinstance(candidates, np.ndarray) and candidates.ndim == 2:
            rows = list(candidates)
        else:
            rows = [np.asarray(c, dtype=np.int64) for c in candidates]
        if not (len(users) == len(positives) == len(rows)):
            raise ValueError("users, positives and candidates must align")
        width = max((r.size for r in rows), default=0)
        cand = np.zeros((len(rows), width), dtype=np.int64)
        mask = np.zeros((len(rows), width), dtype=bool)
        self_pos = np.zeros(len(rows), dtype=np.int64)
        for a, r in enumerate(rows):
            if r.size == 0:
                raise ValueError(f"anchor {a} has an empty candidate list")
            hits = np.flatnonzero(r == positives[a])
            if hits.size != 1:
                raise ValueError(f"anchor {a}: positive must appear exactly once among candidates")
            cand[a, : r.size] = r
            # pad with the positive so padding never touches an unrelated row
            cand[a, r.size:] = positives[a]
            mask[a, : r.size] = True
            self_pos[a] = hits[0]
        return cls(users, positives, cand, mask, self_pos)

    @classmethod
    def from_negatives(cls, users, positives, negatives: np.ndarray) -> "BatchSample":
        """Dense fast path: column 0 is the positive, the rest are sampled negatives."""
        users = np.asarray(users, dtype=np.int64)
        positives = np.asarray(positives, dtype=np.int64)
        cand = np.concatenate([positives[:, None], np.asarray(negatives, dtype=np.int64)], axis=1)
        return cls(users, positives, cand, np.ones(cand.shape, dtype=bool), np.zeros(len(users), dtype=np.int64))

    def __len__(self):
        return len(self.users)


@dataclass
class SparseGrads:
    """Gradient rows for the embedding rows a batch touched."""

    user_rows: np.ndarray
    user_grad: np.ndarray
    item_rows: np.ndarray
    item_grad: np.ndarray

    def to_dense(self, n_users: int, n_items: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
        gu = np.zeros((n_users, dim))
        gi = np.zeros((n_items, dim))
        gu[self.user_rows] = self.user_grad
        gi[self.item_rows] = self.item_grad
        return gu, gi


def _cosines(U, V, users, cand, chunk=256):
    """Unit vectors and cosine of each (anchor, candidate) pair."""
    un = np.linalg.norm(U[users], axis=1)
    if (un <= 0).any():
        raise NumericError("zero-norm user row")
    uhat = U[users] / un[:, None]
    items, inv = np.unique(cand, return_inverse=True)
    inv = inv.reshape(cand.shape)
    vn = np.linalg.norm(V[items], axis=1)
    if (vn <= 0).any():
        raise NumericError("zero-norm item row")
    vhat = V[items] / vn[:, None]
    cos = np.empty(cand.shape)
    for s in range(0, len(users), chunk):
        cos[s:s + chunk] = np.einsum("bd,bcd->bc", uhat[s:s + chunk], vhat[inv[s:s + chunk]])
    return uhat, un, items, inv, vhat, vn, cos


def _gap_coefficients(gaps, mask, self_mask, users, spec: LossSpec):
    """Per-anchor losses and dL/d(gap) for every candidate (unscaled by batch size)."""
    if spec.kind in ("PSL", "SL", "BSL"):
        inner = spec if spec.kind != "BSL" else LossSpec("SL", tau=spec.tau2)
        z = np.where(mask, _psl_logits(gaps, inner), -np.inf)
        losses = logsumexp(z, axis=1)
        p = np.exp(z - losses[:, None])
        coef = np.where(mask, p * _psl_dlogits(gaps, inner), 0.0)
        if spec.kind == "BSL":
            outer = np.empty_like(losses)
            total = 0.0
            for u in np.unique(users):
                grp = np.flatnonzero(users == u)
                l = losses[grp] / spec.tau1
                lse = logsumexp(l)
                outer[grp] = np.exp(l - lse)
                total += spec.tau1 * (lse - np.log(grp.size))
            coef = coef * outer[:, None]
            return total, losses, coef
        return float(losses.sum()), losses, coef
    # BPR over negatives only
    neg = mask & ~self_mask
    terms = np.where(neg, log_value(spec.activation, gaps), 0.0)
    losses = terms.sum(axis=1)
    coef = np.where(neg, dlog_value(spec.activation, gaps), 0.0)
    return float(losses.sum()), losses, coef


def batch_loss_and_grads(m, batch: BatchSample, spec: LossSpec) -> tuple[float, SparseGrads]:
    """Mean loss over the batch's anchors and its gradient w.r.t. the score tables' rows.

    ``m`` is an EmbeddingModel (MF) or PropagatedEmbeddings (LightGCN output);
    for LightGCN the caller back-propagates the returned gradient.
    """
    U, V = tables(m)
    B = len(batch)
    if B == 0:
        raise ValueError("empty batch")
    uhat, un, items, inv, vhat, vn, cos = _cosines(U, V, batch.users, batch.candidates)
    scores = 0.5 * cos
    rows = np.arange(B)
    gaps = scores - scores[rows, batch.self_pos][:, None]
    self_mask = np.zeros_like(batch.mask)
    self_mask[rows, batch.self_pos] = True
    total, _, coef = _gap_coefficients(gaps, batch.mask, self_mask, batch.users, spec)
    if not np.isfinite(total):
        raise NumericError(f"non-finite batch loss ({total})")
    # dL/ds: +coef on each candidate, -sum(coef) on the anchor positive
    ds = coef.copy()
    ds[rows, batch.self_pos] -= coef.sum(axis=1)
    ds /= B
    dcos = 0.5 * ds

    n_u = len(items)
    flat_inv = inv.ravel()
    flat_b = np.repeat(rows, inv.shape[1])
    w = dcos.ravel()
    pair = sp.csr_matrix((w, (rows.repeat(inv.shape[1]), flat_inv)), shape=(B, n_u))
    # user side: (sum_c w_c vhat_c - (sum_c w_c cos_c) uhat) / |u|
    g_anchor = (pair @ vhat - (dcos * cos).sum(axis=1)[:, None] * uhat) / un[:, None]
    urows, uinv = np.unique(batch.users, return_inverse=True)
    gu = np.zeros((urows.size, U.shape[1]))
    np.add.at(gu, uinv, g_anchor)
    # item side: (sum w uhat - (sum w cos) vhat) / |v|
    pair_t = sp.csr_matrix((w, (flat_inv, flat_b)), shape=(n_u, B))
    wcos = np.bincount(flat_inv, weights=(dcos * cos).ravel(), minlength=n_u)
    gi = (pair_t @ uhat - wcos[:, None] * vhat) / vn[:, None]
    grads = SparseGrads(urows, gu, items, gi)
    if not (np.isfinite(gu).all() and np.isfinite(gi).all()):
        raise NumericError("non-finite gradient")
    return total / B, grads


def sl_reference_loss_and_grads(m, batch: BatchSample, tau: float) -> tuple[float, SparseGrads]:
    """Softmax cross-entropy form of SL, written independently of the PSL path.

    loss_a = logsumexp_j(f(u, j) / tau) - f(u, i) / tau, so dL/df(u, j) = softmax_j / tau
    and dL/df(u, i) = -1 / tau (plus its own softmax share as a candidate).
    """
    U, V = tables(m)
    B = len(batch)
    dim = U.shape[1]
    user_acc: dict[int, np.ndarray] = {}
    item_acc: dict[int, np.ndarray] = {}
    total = 0.0
    for a in range(B):
        u = int(batch.users[a])
        cands = batch.candidates[a][batch.mask[a]]
        pos = int(batch.positives[a])
        uvec = U[u]
        nu = np.linalg.norm(uvec)
        vecs = V[cands]
        nv = np.linalg.norm(vecs, axis=1)
        f = 0.5 * (vecs @ uvec) / (nu * nv)
        fi = 0.5 * (V[pos] @ uvec) / (nu * np.linalg.norm(V[pos]))
        logits = f / tau
        top = logits.max()
        lse = top + np.log(np.exp(logits - top).sum())
        total += lse - fi / tau
        soft = np.exp(logits - lse) / tau
        df = list(zip(cands.tolist(), soft.tolist())) + [(pos, -1.0 / tau)]
        for item, c in df:
            vv = V[item]
            nvv = np.linalg.norm(vv)
            dot = float(uvec @ vv)
            gu = 0.5 * (vv / (nu * nvv) - dot * uvec / (nu ** 3 * nvv))
            gv = 0.5 * (uvec / (nu * nvv) - dot * vv / (nvv ** 3 * nu))
            user_acc[u] = user_acc.get(u, np.zeros(dim)) + c * gu / B
            item_acc[item] = item_acc.get(item, np.zeros(dim)) + c * gv / B
    ur = np.array(sorted(user_acc), dtype=np.int64)
    ir = np.array(sorted(item_acc), dtype=np.int64)
    return total / B, SparseGrads(ur, np.array([user_acc[k] for k in ur]).reshape(-1, dim),
                                  ir, np.array([item_acc[k] for k in ir]).reshape(-1, dim))
