import numpy as np
import pytest

from pslrec.data import Dataset, SplitBundle, from_lists, make_rng, spawn_rngs, split_iid, split_ood
from pslrec.errors import ConfigError, TrainingError
from pslrec.losses import BatchSample, LossSpec, batch_loss_and_grads, psl_spec, sl_spec
from pslrec.metrics import evaluate_train
from pslrec.model import LightGCNGraph, init_embeddings
from pslrec.optim import AdamState, TrainConfig, adam_step, train
from pslrec.synthetic import planted_blocks


def one_param(value=0.5, lr=1e-3, wd=0.0):
    params = {"w": np.array([[value]])}
    return params, AdamState.for_params(params, lr, wd)


def test_first_step_moves_by_lr():
    params, st = one_param()
    adam_step(st, params, {"w": (np.array([0]), np.array([[1.0]]))})
    assert params["w"][0, 0] == pytest.approx(0.5 - 1e-3, abs=1e-10)
    assert st.t == 1


def test_zero_gradient_no_decay_is_fixed():
    params, st = one_param()
    adam_step(st, params, {"w": (np.array([0]), np.array([[0.0]]))})
    assert params["w"][0, 0] == 0.5


def test_decay_pulls_towards_zero():
    params, st = one_param(wd=0.1)
    adam_step(st, params, {"w": (np.array([0]), np.array([[0.0]]))})
    assert 0 < params["w"][0, 0] < 0.5


def test_untouched_rows_bit_identical():
    r = make_rng(0)
    params = {"user": r.normal(size=(5, 3))}
    st = AdamState.for_params(params, 0.01)
    before = params["user"].copy()
    adam_step(st, params, {"user": (np.array([1, 3]), r.normal(size=(2, 3)))})
    np.testing.assert_array_equal(params["user"][[0, 2, 4]], before[[0, 2, 4]])
    assert not np.array_equal(params["user"][[1, 3]], before[[1, 3]])
    np.testing.assert_array_equal(st.m["user"][[0, 2, 4]], 0)


def test_global_step_counter_drives_bias_correction():
    r = make_rng(0)
    params = {"p": np.ones((2, 1))}
    st = AdamState.for_params(params, 0.1)
    adam_step(st, params, {"p": (np.array([0]), np.array([[1.0]]))})
    adam_step(st, params, {"p": (np.array([0]), np.array([[1.0]]))})
    adam_step(st, params, {"p": (np.array([1]), np.array([[1.0]]))})
    # row 1 sees its first gradient at t=3: m=0.1, v=0.001, bias corrections use t=3
    m_hat = 0.1 / (1 - 0.9 ** 3)
    v_hat = 0.001 / (1 - 0.999 ** 3)
    assert params["p"][1, 0] == pytest.approx(1 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), rel=1e-12)


def test_non_finite_gradient_raises():
    params, st = one_param()
    with pytest.raises(TrainingError, match="batch 7"):
        adam_step(st, params, {"w": (np.array([0]), np.array([[np.nan]]))}, diagnostics="(batch 7)")
    assert st.t == 0


def test_norm_floor_after_step():
    params = {"p": np.array([[1e-3, 0.0]])}
    st = AdamState.for_params(params, 1e-3)
    adam_step(st, params, {"p": (np.array([0]), np.array([[1.0, 0.0]]))})
    assert np.linalg.norm(params["p"][0]) >= 1e-8


def test_train_config_validation():
    for bad in ({"lr": 0}, {"batch_size": 0}, {"n_negatives": 0}, {"select_on": "magic"}, {"epochs": -1}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    c = TrainConfig()
    assert (c.batch_size, c.epochs, c.n_negatives, c.dim) == (1024, 200, 1000, 64)


def planted_full():
    d = planted_blocks()
    return SplitBundle(train=d, test=Dataset.empty_like(d))


def test_zero_epochs_returns_initial_model():
    s = planted_full()
    cfg = TrainConfig(epochs=0, dim=4, select_on="train", seed=5)
    res = train(s, sl_spec(0.2), cfg)
    init = init_embeddings(s.n_users, s.n_items, 4, spawn_rngs(5, 3)[0])
    assert res.history == [] and res.best_epoch is None
    np.testing.assert_array_equal(res.model.user_emb, init.user_emb)


def test_determinism_to_the_bit():
    s = planted_full()
    cfg = TrainConfig(epochs=5, dim=8, n_negatives=8, lr=0.01, batch_size=32, select_on="train", seed=3)
    a, b = train(s, psl_spec("relu_shift", 0.2), cfg), train(s, psl_spec("relu_shift", 0.2), cfg)
    assert a.history_csv() == b.history_csv()
    np.testing.assert_array_equal(a.model.user_emb, b.model.user_emb)


def test_best_checkpoint_is_history_max():
    d = from_lists([[(u * 3 + k) % 30 for k in range(8)] for u in range(30)], n_items=30)
    s = split_iid(d, 0.2, 0.2, make_rng(0))
    res = train(s, sl_spec(0.2), TrainConfig(epochs=6, dim=8, n_negatives=16, lr=0.01, seed=0))
    assert res.select_on == "validation"
    assert res.best_ndcg == max(r["ndcg"] for r in res.history)
    assert res.history[[r["epoch"] for r in res.history].index(res.best_epoch)]["ndcg"] == res.best_ndcg


def test_selection_targets():
    d = from_lists([[(u + k) % 12 for k in range(5)] for u in range(12)], n_items=12)
    iid = split_iid(d, 0.2, 0.0, make_rng(0))
    with pytest.raises(ConfigError):
        train(iid, sl_spec(0.2), TrainConfig(epochs=1, dim=4, n_negatives=4))
    ood = split_ood(d, 0.2, make_rng(0))
    assert train(ood, sl_spec(0.2), TrainConfig(epochs=1, dim=4, n_negatives=4)).select_on == "test"


def test_eval_every_and_final_epoch():
    s = planted_full()
    res = train(s, sl_spec(0.2), TrainConfig(epochs=7, eval_every=3, dim=4, n_negatives=4, select_on="train"))
    assert [r["epoch"] for r in res.history] == [3, 6, 7]
    assert res.history_csv().splitlines()[0] == "epoch,train_loss,val_recall@20,val_ndcg@20"


def test_empty_train_rejected():
    d = from_lists([[], []], n_items=3)
    with pytest.raises(ConfigError):
        train(SplitBundle(train=d, test=d), sl_spec(0.2), TrainConfig(epochs=1))


def test_planted_sl_recovers_structure():
    s = planted_full()
    res = train(s, sl_spec(0.2), TrainConfig(epochs=50, dim=8, n_negatives=16, lr=0.01, select_on="train"))
    assert evaluate_train(res.model, s.train).ndcg(20) > 0.9


def test_lightgcn_end_to_end_gradient():
    # loss(propagate(E)) differentiated through backprop matches finite differences on E
    train_d = from_lists([[0, 1], [1, 2], [0, 3]], n_items=4)
    graph = LightGCNGraph(train_d, 2)
    m = init_embeddings(3, 4, 3, make_rng(2), "lightgcn", 2)
    b = BatchSample.build([0, 1, 2], [0, 2, 3], [[0, 2, 3], [2, 0], [3, 1, 2]])
    spec = psl_spec("tanh_plus_one", 0.2)
    _, g = batch_loss_and_grads(graph.propagate(m), b, spec)
    gu, gi = graph.backprop(*g.to_dense(3, 4, 3))
    h = 1e-6
    for M, G in ((m.user_emb, gu), (m.item_emb, gi)):
        for idx in np.ndindex(M.shape):
            o = M[idx]
            M[idx] = o + h
            lp = batch_loss_and_grads(graph.propagate(m), b, spec)[0]
            M[idx] = o - h
            lm = batch_loss_and_grads(graph.propagate(m), b, spec)[0]
            M[idx] = o
            assert (lp - lm) / (2 * h) == pytest.approx(G[idx], abs=1e-8)


def test_lightgcn_training_runs():
    s = planted_full()
    res = train(s, LossSpec("BPR"), TrainConfig(epochs=3, dim=4, n_negatives=4, select_on="train"),
                backbone="lightgcn", layers=2)
    assert res.model.backbone == "lightgcn" and len(res.history) == 3
