"""Checks on the frozen deterrence profile when firm 0 discounts the future.

The profile is: firm 0 posts h(mu_t) = 2 * lower posterior bound - 1 every
period and firm 1 prices at zero, so the consumer always buys from firm 0 and
the belief never moves.  A one-period upward deviation to ``tau`` lets firm
1 sell with probability G_mu(v) and moves the belief to mu_0 (firm 0 sold) or
mu_1 (firm 1 sold), after which the profile resumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .beliefs import deterrence_price_curve, deterrence_slope_bound, posterior
from .dynamics import TrajectoryRecord, classify_outcome, draw_run, run_streams
from .signals import SignalKind, SignalStructure, classify
from .stage_game import price_grids


class FarsightedError(ValueError):
    pass


class NoThresholdError(FarsightedError):
    """Profitable deviations persist all the way up to ``1 - tol``."""


@dataclass(frozen=True)
class FarsightedConfig:
    delta: float
    structure: SignalStructure = field(repr=False)
    grid_size: int = 201
    scan: int = 41
    # a deviation "gains" only above this, the same slack the stage solver uses
    gain_tol: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise FarsightedError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.structure.bounded:
            raise FarsightedError("the deterrence profile needs bounded signals")
        if self.grid_size < 2:
            raise FarsightedError("grid_size must be at least 2")


@dataclass(frozen=True)
class Jumps:
    v: float
    sale_other: float  # G_mu(v): probability firm 1 sells after the deviation
    mu0: float
    mu1: float


def _cut(mu, tau, s):
    """Firm 0's cut at prices (tau, 0), snapped onto the support end within 1e-12."""
    _, v, _ = K.decision_cuts(float(mu), float(tau), 0.0)
    if abs(v - s.support_lo) <= 1e-12:
        v = s.support_lo
    return v


def posterior_jumps(mu: float, tau: float, s: SignalStructure) -> Jumps:
    """Beliefs after firm 0 (mu0) or firm 1 (mu1) sells at prices (tau, 0)."""
    v = _cut(mu, tau, s)
    g0 = s.G0(v)
    g = s.G_mu(v, mu)
    mu0 = mu * (1.0 - g0) / (1.0 - g) if g < 1.0 else mu
    mu1 = mu * g0 / g if g > 0.0 else mu
    return Jumps(float(v), float(g), float(mu0), float(mu1))


def jump_closed_forms(mu: float, tau: float, s: SignalStructure):
    """(mu0 - mu, mu - mu1) written through G1 - G0 directly."""
    v = _cut(mu, tau, s)
    g = s.G_mu(v, mu)
    spread = mu * (1.0 - mu) * (s.G1(v) - s.G0(v))
    up = spread / (1.0 - g) if g < 1.0 else 0.0
    down = spread / g if g > 0.0 else 0.0
    return float(up), float(down)


def deviation_gain(mu: float, tau: float, s, delta: float | None = None) -> float:
    """Value of a one-period deviation to ``tau`` minus the value h(mu) of staying.

    ``s`` is a structure (then ``delta`` is required) or a FarsightedConfig.
    ``delta = 0`` is allowed here and reduces to the stage payoff comparison.
    """
    if isinstance(s, FarsightedConfig):
        s, delta = s.structure, s.delta if delta is None else delta
    if delta is None:
        raise FarsightedError("deviation_gain needs delta")
    if not 0.0 < mu < 1.0:
        raise FarsightedError(f"mu must lie in (0, 1), got {mu}")
    j = posterior_jumps(mu, tau, s)
    h = deterrence_price_curve(mu, s)
    stay = 1.0 - j.sale_other
    h0 = deterrence_price_curve(j.mu0, s) if stay > 0.0 else h
    h1 = deterrence_price_curve(j.mu1, s) if j.sale_other > 0.0 else h
    now = stay * tau
    later = stay * h0 + j.sale_other * h1
    return float((1.0 - delta) * now + delta * later - h)


def sufficient_condition(mu: float, tau: float, s: SignalStructure, delta: float) -> bool:
    """Lipschitz-bound inequality under which the deviation cannot gain.

    (1 - delta) [h(mu) - (1 - G) tau] >= delta C mu (1 - mu) (G1 - G0),
    with C the slope bound of h.  Holding it implies deviation_gain <= 0.
    """
    v = _cut(mu, tau, s)
    g = s.G_mu(v, mu)
    lhs = (1.0 - delta) * (deterrence_price_curve(mu, s) - (1.0 - g) * tau)
    rhs = delta * deterrence_slope_bound(s) * mu * (1.0 - mu) * (s.G1(v) - s.G0(v))
    return bool(lhs >= rhs)


@dataclass(frozen=True)
class DeviationScan:
    mu: float
    max_gain: float
    argmax_tau: float
    grid_step: float
    # largest change of the gain between neighbouring grid prices; how much
    # the continuum sup could exceed the grid max, reported not enforced
    grid_variation: float

    def to_dict(self):
        return dict(self.__dict__)


def scan_deviations(mu: float, cfg: FarsightedConfig) -> DeviationScan:
    grid, _ = price_grids(mu, cfg.structure, cfg.grid_size)
    gains = np.array([deviation_gain(mu, t, cfg.structure, cfg.delta) for t in grid])
    i = int(np.argmax(gains))
    return DeviationScan(
        mu=float(mu),
        max_gain=float(gains[i]),
        argmax_tau=float(grid[i]),
        grid_step=float(grid[1] - grid[0]),
        grid_variation=float(np.max(np.abs(np.diff(gains)))) if len(gains) > 1 else 0.0,
    )


@dataclass(frozen=True)
class MuPrime:
    delta: float
    mu_prime: float
    bracket: tuple
    grid_size: int
    slope_bound: float
    scan: DeviationScan

    def to_dict(self):
        return {
            "delta": self.delta,
            "mu_prime": self.mu_prime,
            "bracket": list(self.bracket),
            "grid_size": self.grid_size,
            "slope_bound": self.slope_bound,
            "diagnostics": self.scan.to_dict(),
        }


def _require_non_vanishing(s: SignalStructure):
    cls = classify(s)
    if cls.kind is not SignalKind.BOUNDED_NON_VANISHING:
        raise FarsightedError(
            f"threshold search needs bounded signals without vanishing likelihood, got {cls.kind.value}"
        )


def find_mu_prime(cfg: FarsightedConfig, tol: float = 1e-3) -> MuPrime:
    """Smallest prior above which no grid deviation from the profile pays.

    The scan starts where h(mu) = 0 (below that the profile is not defined)
    and runs up to ``1 - tol``; the last failing scan point and the next one
    bracket mu', which bisection then narrows to ``tol``.
    """
    s = cfg.structure
    _require_non_vanishing(s)

    def ok(m):
        return scan_deviations(m, cfg).max_gain <= cfg.gain_tol

    start = 1.0 - s.support_lo  # posterior(mu, lo) = 1/2 exactly here
    pts = np.linspace(start, 1.0 - tol, cfg.scan)
    flags = [ok(m) for m in pts]
    if not flags[-1]:
        raise NoThresholdError(f"profitable deviation persists up to mu={pts[-1]:.6f} (delta={cfg.delta})")
    bad = [i for i, f in enumerate(flags) if not f]
    if not bad:
        far = near = float(pts[0])
    else:
        near, far = float(pts[bad[-1]]), float(pts[bad[-1] + 1])
        while far - near > tol:
            mid = 0.5 * (near + far)
            if ok(mid):
                far = mid
            else:
                near = mid
    return MuPrime(cfg.delta, far, (near, far), cfg.grid_size, deterrence_slope_bound(s), scan_deviations(far, cfg))


def simulate_frozen_profile(cfg: FarsightedConfig, mu0: float, mu_prime: float, T: int = 1000,
                            seed: int = 0, state=None) -> TrajectoryRecord:
    """Play the deterrence profile from ``mu0`` and check nothing ever moves."""
    if mu0 < mu_prime:
        raise FarsightedError(f"mu0={mu0} is below mu'={mu_prime}")
    if not 0.0 < mu0 < 1.0:
        raise FarsightedError("mu0 must lie in (0, 1)")
    s = cfg.structure
    lo, dx, tab0, tab1 = s.tables
    rng = run_streams(seed, 1)[0]
    omega, uni = draw_run(rng, mu0, T, state)
    tab = tab0 if omega == 0 else tab1
    mus = np.empty(T + 1)
    tau0 = np.empty(T)
    act = np.empty(T, dtype=np.int64)
    v0 = np.empty(T)
    corr = np.empty(T)
    mu = float(mu0)
    for t in range(T):
        price = max(0.0, 2.0 * posterior(mu, lo) - 1.0)
        full, a, b = K.decision_cuts(mu, price, 0.0)
        a, b = K.snap_cuts(K.KIND_DETER0, full, a, b, lo, s.support_hi)
        p = K.quantile_at(uni[t, 2], lo, dx, tab)
        action = K.act_from_belief(p, mu, full, a, b)
        ratio = K.action_ratio(action, full, a, b, lo, dx, tab0, tab1)
        nxt = K.update_mu(mu, ratio)
        mus[t], tau0[t], act[t], v0[t] = mu, price, action, a
        corr[t] = K.correct_prob(omega, full, a, b, lo, dx, tab0, tab1)
        if action != K.BUY0 or nxt != mu:
            raise FarsightedError(f"frozen profile moved at t={t}: action={action}, mu {mu} -> {nxt}")
        mu = nxt
    mus[T] = mu
    tr = TrajectoryRecord(
        run=0, state=omega, mu=mus, tau0=tau0, tau1=np.zeros(T), action=act, v0=v0, v1=v0.copy(),
        correct=corr, status="herd", onset=0,
    )
    tr.outcome = classify_outcome(tr)
    return tr
