"""Top-K Recall / NDCG / MRR with masking of known positives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset, SplitBundle
from .model import score_matrix


@dataclass
class MetricReport:
    values: dict = field(default_factory=dict)  # K -> {"recall", "ndcg", "mrr"}
    n_users_evaluated: int = 0

    def __getitem__(self, k):
        return self.values[k]

    def ndcg(self, k=20) -> float:
        return self.values[k]["ndcg"]

    def recall(self, k=20) -> float:
        return self.values[k]["recall"]

    def to_dict(self) -> dict:
        out = {str(k): dict(sorted(v.items())) for k, v in sorted(self.values.items())}
        out["n_users"] = self.n_users_evaluated
        return out


def rank_by_counting(scores: Sequence[float], i: int) -> int:
    """Number of items whose score is >= the score of item i (ties count against i)."""
    scores = np.asarray(scores, dtype=float)
    return int(np.count_nonzero(scores >= scores[i]))


def _idcg(n: int) -> float:
    return float(np.sum(1.0 / np.log2(np.arange(2, n + 2))))


def ranking_metrics(ranks: np.ndarray, n_relevant: int, k: int) -> tuple[float, float, float]:
    """(recall, ndcg, mrr) at cutoff k given the 1-based ranks of a user's relevant items."""
    hit = ranks[ranks <= k]
    recall = hit.size / n_relevant
    dcg = float(np.sum(1.0 / np.log2(1.0 + hit)))
    ndcg = dcg / _idcg(min(k, n_relevant))
    mrr = float(np.mean(1.0 / hit)) if hit.size else 0.0
    return recall, ndcg, mrr


def _accumulate(scores: np.ndarray, part: np.ndarray, targets: Dataset, masks: list, ks: list, sums: dict) -> None:
    for row, u in enumerate(part):
        for mk in masks:
            if len(mk[u]):
                scores[row, np.asarray(mk[u])] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, order.shape[1] + 1)[None, :], axis=1)
    for row, u in enumerate(part):
        rel = targets.positives[u]
        r = ranks[row, rel]
        for k in ks:
            sums[k] += ranking_metrics(r, rel.size, k)


def _report(sums: dict, ks: list, n: int) -> MetricReport:
    values = {k: dict(zip(("recall", "ndcg", "mrr"), (sums[k] / n if n else np.zeros(3)).tolist())) for k in ks}
    return MetricReport(values, int(n))


def _setup(targets: Dataset, exclude, ks):
    ks = sorted({int(k) for k in ks})
    masks = [d.positives if isinstance(d, Dataset) else d for d in exclude]
    users = np.array([u for u in range(targets.n_users) if targets.positives[u].size], dtype=np.int64)
    return ks, masks, users, {k: np.zeros(3) for k in ks}


def evaluate_scores(scores: np.ndarray, targets: Dataset, exclude: Iterable = (), ks=(20,)) -> MetricReport:
    """Metrics from a full (n_users, n_items) score matrix; same ranking rules as ``evaluate_targets``."""
    ks, masks, users, sums = _setup(targets, exclude, ks)
    _accumulate(np.array(scores, dtype=float)[users], users, targets, masks, ks, sums)
    return _report(sums, ks, users.size)


def evaluate_targets(m, targets: Dataset, exclude: Iterable = (), ks=(20,), chunk: int = 512) -> MetricReport:
    """Rank every item per user, mask ``exclude`` positives, and score ``targets``.

    Ranking is by score descending with ties broken by ascending item index.
    ``exclude`` holds Datasets or per-user item sequences.
    """
    ks, masks, users, sums = _setup(targets, exclude, ks)
    for s in range(0, users.size, chunk):
        part = users[s:s + chunk]
        _accumulate(score_matrix(m, part), part, targets, masks, ks, sums)
    return _report(sums, ks, users.size)


def evaluate(m, split: SplitBundle, ks=(20,), extra_exclude: Optional[Sequence] = None) -> MetricReport:
    """Test-set metrics with train, validation and noise-pool positives masked."""
    exclude = [split.train, split.noise_pool]
    if split.validation is not None:
        exclude.append(split.validation)
    if extra_exclude:
        exclude.extend(extra_exclude)
    return evaluate_targets(m, split.test, exclude, ks)


def evaluate_validation(m, split: SplitBundle, ks=(20,)) -> MetricReport:
    return evaluate_targets(m, split.validation, [split.train, split.noise_pool], ks)


def evaluate_train(m, train: Dataset, ks=(20,)) -> MetricReport:
    """Ranking quality on the training positives themselves (nothing masked)."""
    return evaluate_targets(m, train, (), ks)
