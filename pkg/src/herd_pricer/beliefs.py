"""Bayesian plumbing for the public belief.

All updates go through odds multiplication (see ``_kernels.update_mu``);
exposed values are probabilities of state 0.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .signals import SignalError, SignalStructure


class Action(enum.IntEnum):
    BUY0 = K.BUY0
    BUY1 = K.BUY1
    EXIT = K.EXIT


class BeliefError(ValueError):
    pass


@dataclass(frozen=True)
class PublicBelief:
    mu: float

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise BeliefError(f"public belief must lie in [0, 1], got {self.mu}")

    @property
    def absorbing(self) -> bool:
        return self.mu in (0.0, 1.0)


@dataclass(frozen=True)
class PosteriorBounds:
    lo: float
    hi: float


def posterior(mu: float, p: float) -> float:
    """Posterior on state 0 after a private belief ``p`` under prior ``mu``."""
    if not (0.0 <= mu <= 1.0 and 0.0 <= p <= 1.0):
        raise BeliefError(f"mu and p must be probabilities, got mu={mu}, p={p}")
    out = K.posterior(float(mu), float(p))
    if np.isnan(out):
        raise BeliefError(f"posterior undefined for mu={mu}, p={p} (zero denominator)")
    return out


def posterior_bounds(mu: float, s: SignalStructure) -> PosteriorBounds:
    return PosteriorBounds(posterior(mu, s.support_lo), posterior(mu, s.support_hi))


def llr(x):
    """log(x / (1 - x)); returns -inf at 0 and +inf at 1."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(x) - np.log1p(-x)
    return out if out.ndim else float(out)


def logistic(z):
    z = np.asarray(z, dtype=float)
    out = 0.5 * (1.0 + np.tanh(0.5 * z))
    return out if out.ndim else float(out)


def llr_threshold(mu: float, tau0: float, tau1: float, full: bool | None = None) -> float:
    """LLR of the private-belief cutoff for buying from firm 0.

    Full market: llr((1 + tau0 - tau1) / 2) - llr(mu); otherwise
    llr(tau0) - llr(mu).  The regime defaults to ``tau0 + tau1 <= 1``.
    """
    if full is None:
        full = tau0 + tau1 <= 1.0
    target = (1.0 + tau0 - tau1) / 2.0 if full else tau0
    return llr(target) - llr(mu)


def action_probabilities(mu: float, cuts, s: SignalStructure) -> dict:
    """Probabilities of each action under prior ``mu`` given (full, v0, v1)."""
    full, v0, v1 = cuts
    g_v0 = s.G_mu(v0, mu)
    if full:
        return {Action.BUY0: 1.0 - g_v0, Action.BUY1: g_v0, Action.EXIT: 0.0}
    g_v1 = s.G_mu(v1, mu)
    return {Action.BUY0: 1.0 - g_v0, Action.BUY1: g_v1, Action.EXIT: g_v0 - g_v1}


def update_after_action(mu: float, cuts, action, s: SignalStructure) -> float:
    """Public belief after observing ``action`` taken under the cutoffs ``cuts``.

    ``cuts`` is the (full, v0, v1) triple from ``stage_game.decision_cuts``
    at the same prior and realised prices.
    """
    full, v0, v1 = cuts
    if not 0.0 <= mu <= 1.0:
        raise BeliefError(f"mu must lie in [0, 1], got {mu}")
    lo, dx, tab0, tab1 = s.tables
    ratio = K.action_ratio(int(action), bool(full), float(v0), float(v1), lo, dx, tab0, tab1)
    if np.isnan(ratio):
        raise BeliefError(f"action {Action(action).name} has probability zero in both states")
    return K.update_mu(float(mu), ratio)


def deterrence_price_curve(mu, s: SignalStructure):
    """h(mu) = 2 * lower posterior bound - 1; negative values are not clamped."""
    if not s.bounded:
        raise SignalError("deterrence price is undefined for unbounded signals")
    mu = np.asarray(mu, dtype=float)
    if np.any((mu <= 0.0) | (mu >= 1.0)):
        raise BeliefError("deterrence price curve needs mu in (0, 1)")
    a = s.support_lo
    out = 2.0 * mu * a / (mu * a + (1.0 - mu) * (1.0 - a)) - 1.0
    return out if out.ndim else float(out)


def deterrence_slope_bound(s: SignalStructure) -> float:
    """Upper bound 2 (1 - lo) / lo on the slope of the deterrence price curve."""
    return 2.0 * (1.0 - s.support_lo) / s.support_lo
