import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pslrec.activations import ADVOCATED, Activation
from pslrec.data import make_rng
from pslrec.errors import NumericError
from pslrec.theory import (TAUS, DiscreteDistribution, ScoreInstance, dro_bruteforce, dro_closed_form,
                           fenchel_kl, fenchel_kl_oracle, random_instance, run_verification,
                           verify_dcg_relaxation, verify_surrogate_chain, weight_curve)


def test_instance_validation():
    with pytest.raises(ValueError):
        ScoreInstance([0.1, 0.2], [])
    with pytest.raises(ValueError):
        ScoreInstance([0.1, 0.7], [0])


def test_dcg_chain_single_top_positive():
    r = verify_dcg_relaxation(ScoreInstance([0.4, 0.1, -0.2], [0]))
    assert r["lhs"] == pytest.approx(0, abs=1e-15) and r["mid"] == 0 and r["rhs"] == 0 and r["holds"]


def test_dcg_chain_ranks_two_and_four():
    inst = ScoreInstance([0.4, 0.3, 0.2, 0.1, 0.0], [1, 3])
    assert inst.ranks().tolist() == [2, 4]
    r = verify_dcg_relaxation(inst)
    assert r["lhs"] == pytest.approx(-math.log(1 / math.log2(3) + 1 / math.log2(5)) + math.log(2), abs=1e-12)
    assert r["lhs"] == pytest.approx(0.6333640311, abs=1e-9)
    assert r["mid"] == pytest.approx(-math.log(0.375), abs=1e-12)
    assert r["rhs"] == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
    assert r["holds"]


def test_dcg_chain_random_instances():
    rng = make_rng(0)
    assert all(verify_dcg_relaxation(random_instance(rng))["holds"] for _ in range(300))


def test_ties_use_counting_ranks():
    inst = ScoreInstance([0.2, 0.2, 0.1], [0, 1])
    assert inst.ranks().tolist() == [2, 2]


def test_surrogate_chain_uniform_scores_jensen_equality():
    r = verify_surrogate_chain(ScoreInstance(np.zeros(6), [0, 2, 3]), 0.2)
    for k in ADVOCATED:
        assert abs(r["slacks"][f"jensen[{k.value}]"]) < 1e-12


@given(st.integers(0, 100_000), st.sampled_from(TAUS))
def test_surrogate_chain_random(seed, tau):
    r = verify_surrogate_chain(random_instance(make_rng(seed)), tau)
    assert r["holds"], r["slacks"]


def test_large_gap_widens_sl_over_tanh():
    flat = verify_surrogate_chain(ScoreInstance([0.0, 0.0], [0]), 0.2)
    gap = verify_surrogate_chain(ScoreInstance([-0.45, 0.45], [0]), 0.2)
    assert gap["sl_minus_psl"]["tanh_plus_one"] > flat["sl_minus_psl"]["tanh_plus_one"]


def test_exp_exp_is_loosest():
    r = verify_surrogate_chain(random_instance(make_rng(3)), 0.2)
    assert r["slacks"]["sl<=exp_exp"] >= 0


# --------------------------------------------------------------------------- DRO


def uniform01():
    return DiscreteDistribution([0.5, 0.5], [0.0, 1.0])


def test_distribution_validation():
    with pytest.raises(ValueError):
        DiscreteDistribution([0.5, 0.4], [0, 1])
    with pytest.raises(ValueError):
        DiscreteDistribution(np.full(17, 1 / 17), np.zeros(17))


@pytest.mark.parametrize("eta", [0.0, 0.01, 0.3, 5.0])
def test_closed_form_constant_losses(eta):
    assert dro_closed_form(DiscreteDistribution([0.2, 0.8], [0.7, 0.7]), eta)[0] == pytest.approx(0.7, abs=1e-9)


def test_closed_form_eta_zero_is_mean():
    assert dro_closed_form(uniform01(), 0.0) == (0.5, math.inf)


def test_closed_form_small_eta():
    v, tau = dro_closed_form(uniform01(), 0.02)
    assert v == pytest.approx(0.5995, abs=1e-3)
    assert v == pytest.approx(0.5 + math.sqrt(0.02 / 2), abs=5e-3)
    assert dro_bruteforce(uniform01(), 0.02, 100_000) == pytest.approx(v, abs=1e-3)


def test_closed_form_large_eta_reaches_max():
    assert dro_closed_form(uniform01(), 0.7) == (1.0, 0.0)
    assert dro_bruteforce(uniform01(), 10.0) == pytest.approx(1.0, abs=1e-6)


def test_bruteforce_constant_and_arguments():
    assert dro_bruteforce(DiscreteDistribution([0.3, 0.7], [2.0, 2.0]), 0.1) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        dro_bruteforce(uniform01(), 0.0)
    with pytest.raises(ValueError):
        dro_bruteforce(uniform01(), 0.1, resolution=10)
    with pytest.raises(ValueError):
        dro_bruteforce(DiscreteDistribution(np.full(5, 0.2), np.arange(5.0)), 0.1)


def test_bruteforce_ignores_zero_probability_atoms():
    d = DiscreteDistribution([0.5, 0.5, 0.0], [0.0, 1.0, 100.0])
    assert dro_bruteforce(d, 0.05) == pytest.approx(dro_closed_form(d, 0.05)[0], abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_closed_form_matches_bruteforce(seed):
    r = make_rng(seed)
    n = int(r.integers(2, 5))
    d = DiscreteDistribution(r.dirichlet(np.ones(n)), r.uniform(-1, 1, size=n))
    eta = float(r.uniform(1e-3, 0.5))
    assert dro_bruteforce(d, eta, 20_000) == pytest.approx(dro_closed_form(d, eta)[0], abs=1e-3)


@given(st.integers(0, 10_000))
def test_closed_form_monotone_and_bounded(seed):
    r = make_rng(seed)
    n = int(r.integers(1, 6))
    d = DiscreteDistribution(r.dirichlet(np.ones(n)), r.uniform(-1, 1, size=n))
    vals = [dro_closed_form(d, e)[0] for e in (0.0, 0.01, 0.1, 0.5, 2.0)]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= d.losses.max() + 1e-12


# --------------------------------------------------------------------------- Fenchel and weights


def test_fenchel_examples():
    assert fenchel_kl(1.0, 1.0) == 1.0
    assert fenchel_kl(2.0, 2.0) == 2.0
    with pytest.raises(NumericError):
        fenchel_kl(1000.0, 0.1)
    with pytest.raises(ValueError):
        fenchel_kl(1.0, 0.0)


@given(st.floats(-3, 3), st.floats(0.1, 2.0))
def test_fenchel_matches_sup_definition(y, tau):
    exact = fenchel_kl(y, tau)
    assert abs(fenchel_kl_oracle(y, tau) - exact) / exact < 1e-6


def test_weight_curve_examples():
    w = dict(weight_curve(Activation.EXP, 0.2, [-1.0, 0.0, 1.0]))
    assert w[-1.0] == pytest.approx(math.exp(-5) / 0.2, rel=1e-12)
    assert w[0.0] == pytest.approx(5.0)
    assert w[1.0] == pytest.approx(742.0657955, rel=1e-9)
    assert dict(weight_curve(Activation.RELU, 0.2, [-1.0]))[-1.0] == 0.0


@pytest.mark.parametrize("kind", [Activation.EXP, Activation.RELU])
@pytest.mark.parametrize("tau", TAUS)
def test_unbounded_curves_are_monotone(kind, tau):
    w = np.array([x for _, x in weight_curve(kind, tau, np.linspace(-1, 1, 401))])
    assert np.all(np.diff(w) >= 0)


def test_bounded_curves_turn_over_at_large_tau():
    # the saturating activations down-weight the largest gaps: not monotone once tau is large
    for kind in (Activation.TANH, Activation.ATAN):
        w = np.array([x for _, x in weight_curve(kind, 1.0, np.linspace(-1, 1, 401))])
        assert np.any(np.diff(w) < 0)


# --------------------------------------------------------------------------- suite


def test_run_verification_small_is_deterministic():
    kw = dict(resolution=500, n_random=40, n_dro=4, n_fenchel=10, dro_resolution=5000, seed=2)
    a, b = run_verification(**kw), run_verification(**kw)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a["pass"]
    assert a["admissibility"]["softplus_style"]["expected"] == "inadmissible"
    assert a["admissibility"]["exp_exp"]["note"] == "valid DCG upper bound but loosest in chain"
