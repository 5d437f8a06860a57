"""Numerical checks of the DCG surrogate bounds and the KL-DRO equivalence."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .activations import ADVOCATED, Activation, as_activation, check_admissible, log_value
from .errors import NumericError
from .losses import LossSpec, pair_weight
from .metrics import rank_by_counting

SLACK_TOL = -1e-12
TAUS = (0.05, 0.1, 0.2, 0.5, 1.0)


@dataclass
class ScoreInstance:
    scores: np.ndarray
    positives: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.positives = np.unique(np.asarray(self.positives, dtype=np.int64))
        if self.positives.size == 0:
            raise ValueError("instance needs at least one positive")
        if np.any(np.abs(self.scores) > 0.5):
            raise ValueError("scores must lie in [-0.5, 0.5]")

    @property
    def n_items(self) -> int:
        return self.scores.size

    def ranks(self) -> np.ndarray:
        return np.array([rank_by_counting(self.scores, i) for i in self.positives])

    def gaps(self, i: int) -> np.ndarray:
        """d_ij = f(j) - f(i) over the whole catalogue (including i itself)."""
        return self.scores - self.scores[i]


def random_instance(rng: np.random.Generator, max_items: int = 20) -> ScoreInstance:
    n = int(rng.integers(2, max_items + 1))
    scores = rng.uniform(-0.5, 0.5, size=n)
    if rng.random() < 0.3:
        scores = np.round(scores * 10) / 10  # force ties
    k = int(rng.integers(1, n + 1))
    return ScoreInstance(scores, rng.choice(n, size=k, replace=False))


# --------------------------------------------------------------------------- DCG relaxation


def verify_dcg_relaxation(inst: ScoreInstance) -> dict:
    """-log DCG + log|P|  <=  -log mean(1/rank)  <=  mean(log rank), with counting ranks."""
    r = inst.ranks().astype(float)
    dcg = float(np.sum(1.0 / np.log2(1.0 + r)))
    lhs = -math.log(dcg) + math.log(r.size)
    mid = -math.log(float(np.mean(1.0 / r)))
    rhs = float(np.mean(np.log(r)))
    s1, s2 = mid - lhs, rhs - mid
    return {"lhs": lhs, "mid": mid, "rhs": rhs, "slack_lhs_mid": s1, "slack_mid_rhs": s2,
            "holds": s1 >= SLACK_TOL and s2 >= SLACK_TOL}


# --------------------------------------------------------------------------- surrogate chain


def per_positive_log_sums(inst: ScoreInstance, kind, tau: float) -> np.ndarray:
    """log sum_j sigma(d_ij)^(1/tau) for each positive i."""
    kind = as_activation(kind)
    gaps = inst.scores[None, :] - inst.scores[inst.positives][:, None]
    return logsumexp(log_value(kind, gaps) / tau, axis=1)


def verify_surrogate_chain(inst: ScoreInstance, tau: float,
                           kinds: Sequence = ADVOCATED) -> dict:
    """Slacks of the DCG bound, the activation ordering and the Jensen step.

    (a) -log DCG + log|P| <= mean_i log S_i(sigma) for each sigma in ``kinds``
    (b) log S_i(sigma) <= log S_i(exp) <= log S_i(exp_exp) for every positive i
    (c) mean_i log S_i(sigma) <= log mean_i S_i(sigma)
    """
    r = inst.ranks().astype(float)
    dcg_bound = -math.log(float(np.sum(1.0 / np.log2(1.0 + r)))) + math.log(r.size)
    logs = {Activation(k): per_positive_log_sums(inst, k, tau)
            for k in list(kinds) + [Activation.EXP, Activation.EXP_EXP]}
    exp_l, ee_l = logs[Activation.EXP], logs[Activation.EXP_EXP]
    slacks = {}
    for k, l in logs.items():
        mean_psl = float(np.mean(l))
        slacks[f"dcg<=psl[{k.value}]"] = mean_psl - dcg_bound
        jensen_rhs = float(logsumexp(l) - math.log(l.size))
        slacks[f"jensen[{k.value}]"] = jensen_rhs - mean_psl
        if k in (Activation.EXP, Activation.EXP_EXP):
            continue
        slacks[f"psl[{k.value}]<=sl"] = float(np.min(exp_l - l))
    slacks["sl<=exp_exp"] = float(np.min(ee_l - exp_l))
    worst = min(slacks.values())
    return {"tau": tau, "dcg_bound": dcg_bound, "slacks": slacks, "worst_slack": worst,
            "holds": worst >= SLACK_TOL,
            "sl_minus_psl": {k.value: float(np.mean(exp_l) - np.mean(logs[Activation(k)])) for k in kinds}}


# --------------------------------------------------------------------------- KL-DRO


@dataclass
class DiscreteDistribution:
    probabilities: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        self.losses = np.asarray(self.losses, dtype=float)
        if self.probabilities.shape != self.losses.shape:
            raise ValueError("probabilities and losses must align")
        if self.probabilities.size > 16:
            raise ValueError("support size is limited to 16")
        if np.any(self.probabilities < 0) or abs(self.probabilities.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")

    @property
    def support(self) -> np.ndarray:
        return self.probabilities > 0


def _dual_objective(dist: DiscreteDistribution, eta: float, log_tau: float) -> float:
    tau = math.exp(log_tau)
    p = dist.probabilities[dist.support]
    l = dist.losses[dist.support]
    top = l.max()
    return float(top + tau * logsumexp((l - top) / tau, b=p) + tau * eta)


def dro_closed_form(dist: DiscreteDistribution, eta: float, tol: float = 1e-10) -> tuple[float, float]:
    """min over tau > 0 of tau * log E_P[exp(l / tau)] + tau * eta, by golden section on log tau."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if eta == 0:
        return float(dist.probabilities @ dist.losses), math.inf
    a, b = -20.0, 20.0
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = _dual_objective(dist, eta, c), _dual_objective(dist, eta, d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _dual_objective(dist, eta, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _dual_objective(dist, eta, d)
    x = 0.5 * (a + b)
    val = _dual_objective(dist, eta, x)
    top = float(dist.losses[dist.support].max())
    if val > top:
        # the objective tends to max(l) as tau -> 0; the infimum sits at that boundary
        return top, 0.0
    return val, math.exp(x)


def _kl(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """KL(q || p) along the last axis with 0 log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(q > 0, q * np.log(q / p), 0.0)
    return t.sum(axis=-1)


def _simplex_grid(n: int, budget: int) -> np.ndarray:
    """All q = k / m with k a composition of m into n parts; m is the largest fitting ``budget``."""
    if n == 1:
        return np.ones((1, 1))
    m = 1
    while math.comb(m + 1 + n - 1, n - 1) <= budget:
        m += 1
    if n == 2:
        k = np.arange(m + 1)
        return np.stack([k, m - k], axis=1) / m
    grids = np.meshgrid(*[np.arange(m + 1)] * (n - 1), indexing="ij")
    k = np.stack([g.ravel() for g in grids], axis=1)
    k = k[k.sum(axis=1) <= m]
    return np.concatenate([k, m - k.sum(axis=1, keepdims=True)], axis=1) / m


def dro_bruteforce(dist: DiscreteDistribution, eta: float, resolution: int = 100_000) -> float:
    """sup E_Q[l] over the simplex subject to KL(Q || P) <= eta, searched in the primal.

    A dense simplex grid supplies the best feasible start; a generic
    constrained local solver then polishes it. No dual or tilting formula is used.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if resolution < 100:
        raise ValueError("resolution must be >= 100")
    sup = dist.support
    p, l = dist.probabilities[sup], dist.losses[sup]
    n = p.size
    if n > 4:
        raise ValueError("grid mode supports at most 4 atoms")
    grid = _simplex_grid(n, resolution)
    feasible = _kl(grid, p) <= eta
    vals = np.where(feasible, grid @ l, -np.inf)
    q0 = grid[int(np.argmax(vals))]
    best = float(vals.max())
    if n == 1:
        return best

    floor = 1e-300
    cons = [
        {"type": "eq", "fun": lambda q: q.sum() - 1.0, "jac": lambda q: np.ones_like(q)},
        {"type": "ineq", "fun": lambda q: eta - _kl(np.maximum(q, floor), p),
         "jac": lambda q: -(np.log(np.maximum(q, floor) / p) + 1.0)},
    ]
    start = np.maximum(q0, 1e-12)
    start /= start.sum()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(lambda q: -(q @ l), start, jac=lambda q: -l, method="SLSQP",
                       bounds=[(1e-15, 1.0)] * n, constraints=cons,
                       options={"ftol": 1e-15, "maxiter": 500})
    q = np.clip(res.x, 0.0, None)
    q /= q.sum()
    if _kl(q, p) > eta:
        # pull back into the KL ball along the segment towards P
        lo, hi = 0.0, 1.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if _kl((1 - mid) * q + mid * p, p) <= eta:
                hi = mid
            else:
                lo = mid
        q = (1 - hi) * q + hi * p
    return max(best, float(q @ l))


def fenchel_kl(y: float, tau: float) -> float:
    """Conjugate of tau * x log x: tau * exp(y / tau - 1)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    with np.errstate(over="raise"):
        try:
            return float(tau * np.exp(y / tau - 1.0))
        except FloatingPointError:
            raise NumericError(f"fenchel_kl overflow at y={y}, tau={tau}") from None


def fenchel_kl_oracle(y: float, tau: float, iters: int = 400) -> float:
    """sup_{x > 0} y x - tau x log x by ternary search over log x."""
    h = lambda t: y * math.exp(t) - tau * math.exp(t) * t
    a, b = -120.0, 120.0
    for _ in range(iters):
        m1 = a + (b - a) / 3.0
        m2 = b - (b - a) / 3.0
        if h(m1) < h(m2):
            a = m1
        else:
            b = m2
    return max(h(0.5 * (a + b)), 0.0)


# --------------------------------------------------------------------------- weights


def weight_curve(kind, tau: float, d_grid: Sequence[float]) -> list[tuple[float, float]]:
    spec = LossSpec("PSL", kind, tau=tau)
    d = np.asarray(d_grid, dtype=float)
    return list(zip(d.tolist(), np.atleast_1d(pair_weight(spec, d)).tolist()))


# --------------------------------------------------------------------------- full suite


def run_verification(resolution: int = 10_000, n_random: int = 1000, seed: int = 0,
                     n_dro: int = 50, n_fenchel: int = 100, dro_resolution: int = 100_000,
                     taus: Sequence[float] = TAUS) -> dict:
    rng = np.random.Generator(np.random.PCG64(seed))
    report: dict = {"seed": seed, "resolution": resolution, "n_random_instances": n_random}
    ok = True

    adm = {}
    for kind in Activation:
        rep = check_admissible(kind, resolution).to_dict(max_violations=3)
        expected_fail = kind in (Activation.SOFTPLUS, Activation.EXP_EXP)
        rep["expected"] = "inadmissible" if expected_fail else "admissible"
        if kind is Activation.SOFTPLUS:
            # the upper bound must fail at every grid point
            rep["as_expected"] = (not rep["upper_bound_ok"]) and rep["n_violations"] == resolution
        elif expected_fail:
            rep["as_expected"] = (not rep["upper_bound_ok"]) and rep["lower_bound_ok"]
            rep["note"] = "valid DCG upper bound but loosest in chain"
        else:
            rep["as_expected"] = rep["pass"]
        ok &= rep["as_expected"]
        adm[kind.value] = rep
    report["admissibility"] = adm

    insts = [random_instance(rng) for _ in range(n_random)]
    dcg_worst = min(min(r["slack_lhs_mid"], r["slack_mid_rhs"]) for r in map(verify_dcg_relaxation, insts))
    report["dcg_relaxation"] = {"worst_slack": dcg_worst, "holds": dcg_worst >= SLACK_TOL}
    ok &= dcg_worst >= SLACK_TOL

    chain = {}
    for tau in taus:
        worst: dict = {}
        ee_gap = []
        for inst in insts:
            r = verify_surrogate_chain(inst, tau)
            for k, v in r["slacks"].items():
                worst[k] = min(worst.get(k, math.inf), v)
            ee_gap.append(r["slacks"]["sl<=exp_exp"])
        w = min(worst.values())
        chain[str(tau)] = {"worst_slacks": dict(sorted(worst.items())), "worst_slack": w,
                           "holds": w >= SLACK_TOL, "mean_exp_exp_over_sl": float(np.mean(ee_gap))}
        ok &= w >= SLACK_TOL
    report["surrogate_chain"] = chain

    dro_cases = []
    for _ in range(n_dro):
        n = int(rng.integers(2, 5))
        p = rng.dirichlet(np.ones(n))
        p = p / p.sum()
        dist = DiscreteDistribution(p, rng.uniform(-1.0, 1.0, size=n))
        eta = float(rng.uniform(1e-3, 0.5))
        closed, tau_star = dro_closed_form(dist, eta)
        brute = dro_bruteforce(dist, eta, dro_resolution)
        dro_cases.append((abs(closed - brute), closed <= dist.losses.max() + 1e-12, dist, eta, closed))
    max_err = max(c[0] for c in dro_cases)
    monotone = True
    for _, _, dist, eta, closed in dro_cases:
        monotone &= dro_closed_form(dist, eta * 1.5)[0] >= closed - 1e-9
    bounded = all(c[1] for c in dro_cases)
    report["dro_equivalence"] = {"n_cases": n_dro, "max_abs_error": max_err, "monotone_in_eta": monotone,
                                 "bounded_by_max_loss": bounded,
                                 "holds": max_err < 1e-3 and monotone and bounded}
    ok &= report["dro_equivalence"]["holds"]

    fen_err = 0.0
    for _ in range(n_fenchel):
        y, tau = float(rng.uniform(-3, 3)), float(rng.uniform(0.1, 2.0))
        exact = fenchel_kl(y, tau)
        fen_err = max(fen_err, abs(exact - fenchel_kl_oracle(y, tau)) / exact)
    report["fenchel"] = {"n_cases": n_fenchel, "max_rel_error": fen_err, "holds": fen_err < 1e-6}
    ok &= fen_err < 1e-6

    d = np.linspace(-1.0, 1.0, 201)
    dom = {}
    for kind in ADVOCATED:
        we = np.array([w for _, w in weight_curve(Activation.EXP, 0.2, d)])
        wk = np.array([w for _, w in weight_curve(kind, 0.2, d)])
        sel = d >= 0.5
        dom[kind.value] = {"min_ratio_exp_over_kind": float(np.min(we[sel] / wk[sel])),
                           "holds": bool(np.all(we[sel] > wk[sel]))}
        ok &= dom[kind.value]["holds"]
    report["weight_dominance"] = dom
    report["pass"] = bool(ok)
    return report
