import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pslrec.data import Dataset, SplitBundle, from_lists, make_rng
from pslrec.metrics import (evaluate, evaluate_scores, evaluate_targets, evaluate_train, rank_by_counting,
                            ranking_metrics)
from pslrec.model import EmbeddingModel, score_matrix


def test_rank_by_counting():
    assert rank_by_counting([0.9, 0.5, 0.1], 0) == 1
    assert rank_by_counting([0.9, 0.9, 0.1], 0) == 2 and rank_by_counting([0.9, 0.9, 0.1], 1) == 2
    assert rank_by_counting([0.3, 0.2, 0.5, 0.1], 3) == 4


def test_ranking_metrics_hand_example():
    recall, ndcg, mrr = ranking_metrics(np.array([1, 3]), 2, 20)
    assert recall == 1.0
    assert ndcg == pytest.approx(1.5 / (1 + 1 / math.log2(3)), abs=1e-12)
    assert ndcg == pytest.approx(0.9197207891, abs=1e-9)
    assert mrr == pytest.approx(2 / 3)


def test_ranking_metrics_edge_cases():
    assert ranking_metrics(np.array([1]), 1, 20) == (1.0, 1.0, 1.0)
    assert ranking_metrics(np.array([21]), 1, 20) == (0.0, 0.0, 0.0)


def angle_model(angles):
    """One user at angle 0; item k at angle ``angles[k]`` so scores fall as angles grow."""
    items = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return EmbeddingModel(np.array([[1.0, 0.0]]), items)


def test_evaluate_hand_example_end_to_end():
    m = angle_model(np.linspace(0.1, 3.0, 25))
    # items 0 and 2 are test positives; train masks nothing
    test = from_lists([[0, 2]], n_items=25)
    rep = evaluate_targets(m, test, (), (20,))
    assert rep.ndcg(20) == pytest.approx(0.9197207891, abs=1e-9)
    assert rep.values[20]["mrr"] == pytest.approx(2 / 3)


def test_masking_shifts_ranks():
    m = angle_model(np.linspace(0.1, 3.0, 25))
    train = from_lists([[0, 1]], n_items=25)
    test = from_lists([[2]], n_items=25)
    s = SplitBundle(train=train, test=test)
    assert evaluate(m, s).ndcg(20) == 1.0
    assert evaluate_train(m, train).ndcg(20) == 1.0


def test_validation_positives_masked_at_test_time():
    m = angle_model(np.linspace(0.1, 3.0, 25))
    empty = Dataset.empty_like(from_lists([[]], n_items=25))
    s = SplitBundle(train=empty, test=from_lists([[1]], n_items=25), validation=from_lists([[0]], n_items=25))
    assert evaluate(m, s).values[20]["mrr"] == 1.0


def test_users_without_test_positives_skipped():
    r = make_rng(0)
    m = EmbeddingModel(r.normal(size=(3, 4)), r.normal(size=(6, 4)))
    test = from_lists([[1], [], [2, 3]], n_items=6)
    assert evaluate_targets(m, test).n_users_evaluated == 2


def oracle(scores, test, exclude, k):
    """Full python sort with explicit tie-break, then direct metric formulas."""
    rec, nd, mr, n = 0.0, 0.0, 0.0, 0
    for u in range(test.n_users):
        rel = set(test.positives[u].tolist())
        if not rel:
            continue
        n += 1
        masked = set()
        for d in exclude:
            masked |= set(d.positives[u].tolist())
        items = [i for i in range(scores.shape[1]) if i not in masked]
        ranked = sorted(items, key=lambda i: (-scores[u, i], i))
        ranked += sorted(masked, key=lambda i: i)  # masked items sink to the bottom in index order
        hits = [(pos + 1) for pos, i in enumerate(ranked[:k]) if i in rel]
        rec += len(hits) / len(rel)
        nd += sum(1 / math.log2(1 + r) for r in hits) / sum(1 / math.log2(1 + r) for r in range(1, min(k, len(rel)) + 1))
        mr += (sum(1 / r for r in hits) / len(hits)) if hits else 0.0
    return rec / n, nd / n, mr / n


def random_instance(seed):
    r = make_rng(seed)
    nu, ni = int(r.integers(1, 11)), int(r.integers(2, 31))
    lists_train, lists_test = [], []
    for _ in range(nu):
        perm = r.permutation(ni)
        a, b = int(r.integers(0, ni // 2 + 1)), int(r.integers(0, ni // 2 + 1))
        lists_train.append(perm[:a].tolist())
        lists_test.append(perm[a:a + b].tolist())
    m = EmbeddingModel(r.normal(size=(nu, 3)), r.normal(size=(ni, 3)))
    if r.random() < 0.3:
        m.item_emb[: ni // 2] = m.item_emb[0]  # ties
    return m, from_lists(lists_train, ni), from_lists(lists_test, ni)


@pytest.mark.parametrize("seed", range(100))
def test_evaluate_matches_bruteforce_oracle(seed):
    m, train, test = random_instance(seed)
    if test.n_interactions == 0:
        return
    for k in (1, 5, 20):
        rep = evaluate_targets(m, test, [train], (k,))
        want = oracle(score_matrix(m), test, [train], k)
        got = (rep.values[k]["recall"], rep.values[k]["ndcg"], rep.values[k]["mrr"])
        assert got == pytest.approx(want, abs=1e-12)


@given(st.integers(0, 10_000), st.sampled_from(["cube", "exp", "affine"]))
def test_invariant_to_increasing_transforms(seed, kind):
    m, train, test = random_instance(seed)
    if test.n_interactions == 0:
        return
    s = score_matrix(m)
    f = {"cube": lambda x: x ** 3, "exp": np.exp, "affine": lambda x: 3 * x + 7}[kind]
    a = evaluate_scores(s, test, [train], (5, 20)).to_dict()
    b = evaluate_scores(f(s), test, [train], (5, 20)).to_dict()
    assert a == b


@given(st.integers(0, 10_000))
def test_masked_items_never_in_top_k(seed):
    m, train, test = random_instance(seed)
    s = score_matrix(m)
    # make every train item the best-scored item; metrics must equal the oracle which drops them
    boosted = s.copy()
    for u in range(train.n_users):
        boosted[u, train.positives[u]] = 10.0
    if test.n_interactions:
        assert evaluate_scores(boosted, test, [train]).to_dict() == evaluate_scores(s, test, [train]).to_dict()


def test_report_json_shape():
    m = angle_model(np.linspace(0.1, 3.0, 25))
    d = evaluate_targets(m, from_lists([[3]], n_items=25), (), (20,)).to_dict()
    assert set(d) == {"20", "n_users"} and set(d["20"]) == {"recall", "ndcg", "mrr"}
