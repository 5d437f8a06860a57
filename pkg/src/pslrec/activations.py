"""Surrogate activations for the Heaviside step.

Every function is vectorised over numpy arrays. Values are clamped below at
``EPS`` so that logs and negative powers stay finite; inside the clamped
region the derivative is reported as zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

EPS = 1e-12


class Activation(str, Enum):
    EXP = "exp"
    TANH = "tanh_plus_one"
    ATAN = "atan_plus_one"
    RELU = "relu_shift"
    SOFTPLUS = "softplus_style"
    EXP_EXP = "exp_exp"

    def __str__(self):
        return self.value


ADVOCATED = (Activation.TANH, Activation.ATAN, Activation.RELU)


def as_activation(kind) -> Activation:
    if isinstance(kind, Activation):
        return kind
    try:
        return Activation(str(kind).strip().lower())
    except ValueError:
        names = ", ".join(a.value for a in Activation)
        raise ValueError(f"unknown activation {kind!r}; expected one of {names}") from None


def _raw(kind: Activation, d):
    if kind is Activation.EXP:
        return np.exp(d)
    if kind is Activation.TANH:
        # tanh(d) + 1 == 2 * sigmoid(2d), without cancellation for d << 0
        return 2.0 * expit(2.0 * d)
    if kind is Activation.ATAN:
        return np.arctan(d) + 1.0
    if kind is Activation.RELU:
        return np.maximum(d + 1.0, 0.0)
    if kind is Activation.SOFTPLUS:
        return np.exp(d) + 1.0
    if kind is Activation.EXP_EXP:
        return np.exp(np.exp(d))
    raise AssertionError(kind)


def act_value(kind, d):
    """sigma(d), clamped below at EPS."""
    kind = as_activation(kind)
    d = np.asarray(d, dtype=float)
    out = np.maximum(_raw(kind, d), EPS)
    return out if out.ndim else float(out)


def act_deriv(kind, d):
    """sigma'(d); zero wherever the value is clamped (incl. relu_shift at d = -1)."""
    kind = as_activation(kind)
    d = np.asarray(d, dtype=float)
    if kind is Activation.EXP:
        out = np.exp(d)
    elif kind is Activation.TANH:
        out = 4.0 * expit(2.0 * d) * expit(-2.0 * d)
    elif kind is Activation.ATAN:
        out = 1.0 / (1.0 + d * d)
    elif kind is Activation.RELU:
        out = np.ones_like(d)
    elif kind is Activation.SOFTPLUS:
        out = np.exp(d)
    else:
        out = np.exp(d + np.exp(d))
    out = np.where(_raw(kind, d) > EPS, out, 0.0)
    return out if out.ndim else float(out)


def log_value(kind, d):
    """log sigma(d) computed without forming sigma for the exp-type kinds."""
    kind = as_activation(kind)
    d = np.asarray(d, dtype=float)
    if kind is Activation.EXP:
        out = d.copy()
    elif kind is Activation.EXP_EXP:
        out = np.exp(d)
    elif kind is Activation.SOFTPLUS:
        out = np.logaddexp(0.0, d)
    else:
        out = np.log(np.maximum(_raw(kind, d), EPS))
    return out if out.ndim else float(out)


def dlog_value(kind, d):
    """d/dd log sigma(d) = sigma'(d) / sigma(d)."""
    kind = as_activation(kind)
    d = np.asarray(d, dtype=float)
    if kind is Activation.EXP:
        out = np.ones_like(d)
    elif kind is Activation.EXP_EXP:
        out = np.exp(d)
    elif kind is Activation.SOFTPLUS:
        out = expit(d)
    elif kind is Activation.TANH:
        out = np.where(_raw(kind, d) > EPS, 2.0 * expit(-2.0 * d), 0.0)
    else:
        out = act_deriv(kind, d) / act_value(kind, d)
    return out if np.ndim(out) else float(out)


@dataclass
class AdmissibilityReport:
    kind: Activation
    passed: bool
    lower_ok: bool
    upper_ok: bool
    n_points: int
    violations: list = field(default_factory=list)

    def to_dict(self, max_violations=20):
        return {
            "kind": self.kind.value,
            "pass": self.passed,
            "lower_bound_ok": self.lower_ok,
            "upper_bound_ok": self.upper_ok,
            "n_points": self.n_points,
            "n_violations": len(self.violations),
            "violations": [
                {"d": d, "sigma": s, "bound": b, "side": side}
                for d, s, b, side in self.violations[:max_violations]
            ],
        }


def check_admissible(kind, grid_resolution: int = 10_000) -> AdmissibilityReport:
    """Check heaviside(d) <= sigma(d) <= exp(d) on a uniform grid over [-1, 1]."""
    kind = as_activation(kind)
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    d = np.linspace(-1.0, 1.0, grid_resolution)
    sigma = act_value(kind, d)
    step = (d >= 0).astype(float)
    upper = np.exp(d)
    violations = []
    low_bad = sigma < step
    up_bad = sigma > upper
    for k in np.flatnonzero(low_bad | up_bad):
        if low_bad[k]:
            violations.append((float(d[k]), float(sigma[k]), float(step[k]), "lower"))
        if up_bad[k]:
            violations.append((float(d[k]), float(sigma[k]), float(upper[k]), "upper"))
    lower_ok = not low_bad.any()
    upper_ok = not up_bad.any()
    return AdmissibilityReport(kind, lower_ok and upper_ok, lower_ok, upper_ok, grid_resolution, violations)
