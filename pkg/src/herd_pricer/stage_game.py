"""The one-shot pricing game played against a single consumer at prior mu."""
from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from . import nash
from ._backend import USE_NUMBA
from .beliefs import Action, posterior_bounds
from .nash import SolverError
from .signals import SignalError, SignalStructure


class Classification(str, enum.Enum):
    DETERRENCE_BY_0 = "DeterrenceBy0"
    DETERRENCE_BY_1 = "DeterrenceBy1"
    NON_DETERRENCE = "NonDeterrence"


@dataclass(frozen=True)
class PriceVector:
    tau0: float
    tau1: float

    def __post_init__(self):
        for t in (self.tau0, self.tau1):
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"prices must lie in [0, 1], got {self}")

    @property
    def full_market(self) -> bool:
        return self.tau0 + self.tau1 <= 1.0


@dataclass(frozen=True)
class DecisionCuts:
    full: bool
    v0: float
    v1: float

    def astuple(self):
        return self.full, self.v0, self.v1


@dataclass(frozen=True)
class SolverOptions:
    grid_size: int = 201
    regret_tol: float = 1e-4
    sale_tol: float = 1e-6
    # deviations from the deterrence profile must not gain more than this
    deviation_tol: float = 1e-12
    fp_iters: int = 20_000
    support_enum_max: int = 12
    phases: tuple = ("deterrence", "pure", "lemke_howson", "fictitious_play", "support_enumeration")


@dataclass(frozen=True)
class MixedStrategy:
    grid: np.ndarray
    weights: np.ndarray

    def mean(self) -> float:
        return float(self.grid @ self.weights)

    def support(self, tol=1e-12):
        return self.grid[self.weights > tol]


@dataclass(frozen=True)
class StageEquilibrium:
    mu: float
    phi0: MixedStrategy
    phi1: MixedStrategy
    sale_prob0: float
    sale_prob1: float
    exit_prob: float
    classification: Classification
    payoffs: tuple
    regret: tuple
    phase: str
    grid_step: float = field(default=0.0)

    @property
    def max_regret(self) -> float:
        return max(self.regret)

    def to_record(self) -> dict:
        return {
            "mu": self.mu,
            "classification": self.classification.value,
            "phase": self.phase,
            "prices": {"firm0": self.phi0.grid.tolist(), "firm1": self.phi1.grid.tolist()},
            "weights": {"firm0": self.phi0.weights.tolist(), "firm1": self.phi1.weights.tolist()},
            "payoffs": list(self.payoffs),
            "sale_probabilities": {
                "firm0": self.sale_prob0,
                "firm1": self.sale_prob1,
                "exit": self.exit_prob,
            },
            "regret_certificate": {"firm0": self.regret[0], "firm1": self.regret[1]},
        }


# -- consumer ---------------------------------------------------------------

def decision(p_post: float, tau: PriceVector, mu: float = 0.5) -> Action:
    """Consumer best reply at posterior ``p_post``.

    Buying beats exiting on ties; a tie between the firms goes to firm 0
    iff ``mu >= 1/2``.
    """
    u0 = p_post - tau.tau0
    u1 = (1.0 - p_post) - tau.tau1
    if u0 < 0.0 and u1 < 0.0:
        return Action.EXIT
    if u0 > u1:
        return Action.BUY0
    if u1 > u0:
        return Action.BUY1
    return Action.BUY0 if mu >= 0.5 else Action.BUY1


def decision_cuts(mu: float, tau: PriceVector) -> DecisionCuts:
    if not 0.0 < mu < 1.0:
        raise ValueError(f"decision cuts need mu in (0, 1), got {mu}")
    full, v0, v1 = K.decision_cuts(float(mu), float(tau.tau0), float(tau.tau1))
    return DecisionCuts(bool(full), v0, v1)


def payoffs(mu: float, tau: PriceVector, s: SignalStructure) -> tuple:
    """Expected revenue of each firm at pure prices ``tau``."""
    cuts = decision_cuts(mu, tau)
    g_v0 = s.G_mu(cuts.v0, mu)
    sale1 = g_v0 if cuts.full else s.G_mu(cuts.v1, mu)
    return (1.0 - g_v0) * tau.tau0, sale1 * tau.tau1


# -- grids and matrices -------------------------------------------------------

def price_grids(mu: float, s: SignalStructure, n: int):
    """Per-firm uniform grids over the prices that can be equilibrium prices.

    Firm 0 never prices below 2*lo_mu - 1 nor sells above hi_mu; firm 1
    mirrors this with 1 - 2*hi_mu and 1 - lo_mu.
    """
    b = posterior_bounds(mu, s)
    g0 = np.linspace(max(0.0, 2.0 * b.lo - 1.0), b.hi, n)
    g1 = np.linspace(max(0.0, 1.0 - 2.0 * b.hi), 1.0 - b.lo, n)
    return g0, g1


def sale_matrices(mu: float, grid0, grid1, s: SignalStructure):
    lo, dx, tab0, tab1 = s.tables
    grid0 = np.ascontiguousarray(grid0, dtype=float)
    grid1 = np.ascontiguousarray(grid1, dtype=float)
    if USE_NUMBA:
        return K.sale_matrices_loop(float(mu), grid0, grid1, lo, dx, tab0, tab1)
    return K.sale_matrices_numpy(float(mu), grid0, grid1, lo, dx, tab0, tab1)


def payoff_matrices(mu: float, grid0, grid1, s: SignalStructure):
    s0, s1 = sale_matrices(mu, grid0, grid1, s)
    return s0 * np.asarray(grid0)[:, None], s1 * np.asarray(grid1)[None, :], s0, s1


# -- equilibrium ---------------------------------------------------------------

def _profile(mu, g0, g1, x, y, a, b, s0, s1, phase, opts) -> StageEquilibrium:
    sale0 = float(x @ s0 @ y)
    sale1 = float(x @ s1 @ y)
    if sale1 < opts.sale_tol:
        cls = Classification.DETERRENCE_BY_0
    elif sale0 < opts.sale_tol:
        cls = Classification.DETERRENCE_BY_1
    else:
        cls = Classification.NON_DETERRENCE
    step = max(g0[1] - g0[0], g1[1] - g1[0]) if len(g0) > 1 else 0.0
    return StageEquilibrium(
        mu=float(mu),
        phi0=MixedStrategy(g0, x),
        phi1=MixedStrategy(g1, y),
        sale_prob0=sale0,
        sale_prob1=sale1,
        exit_prob=max(0.0, 1.0 - sale0 - sale1),
        classification=cls,
        payoffs=(float(x @ a @ y), float(x @ b @ y)),
        regret=nash.regrets(a, b, x, y),
        phase=phase,
        grid_step=float(step),
    )


def deterrence_candidate(mu: float, s: SignalStructure, opts: SolverOptions = SolverOptions()):
    """Verified deterrence profile at ``mu`` or ``None``.

    The dominant firm posts its deterrence price (the first point of its
    grid) and the rival prices at zero; the profile is kept only if neither
    firm gains more than ``opts.deviation_tol`` by moving on its grid.
    """
    if not s.bounded:
        return None
    b = posterior_bounds(mu, s)
    g0, g1 = price_grids(mu, s, opts.grid_size)
    if b.lo >= 0.5:
        i, j = 0, 0
    elif b.hi <= 0.5:
        i, j = 0, 0
    else:
        return None
    row_a, _, row_s0, row_s1 = payoff_matrices(mu, g0, g1[j : j + 1], s)
    col_a, col_b, col_s0, col_s1 = payoff_matrices(mu, g0[i : i + 1], g1, s)
    gain0 = row_a[:, 0].max() - row_a[i, 0]
    gain1 = col_b[0, :].max() - col_b[0, j]
    if max(gain0, gain1) > opts.deviation_tol:
        return None
    x = np.zeros(len(g0))
    y = np.zeros(len(g1))
    x[i] = 1.0
    y[j] = 1.0
    sale0, sale1 = float(row_s0[i, 0]), float(row_s1[i, 0])
    dominant0 = b.lo >= 0.5
    cls = Classification.DETERRENCE_BY_0 if dominant0 else Classification.DETERRENCE_BY_1
    return StageEquilibrium(
        mu=float(mu),
        phi0=MixedStrategy(g0, x),
        phi1=MixedStrategy(g1, y),
        sale_prob0=sale0,
        sale_prob1=sale1,
        exit_prob=max(0.0, 1.0 - sale0 - sale1),
        classification=cls,
        payoffs=(float(row_a[i, 0]), float(col_b[0, j])),
        regret=(float(max(gain0, 0.0)), float(max(gain1, 0.0))),
        phase="deterrence",
        grid_step=float(max(g0[1] - g0[0], g1[1] - g1[0])),
    )


def solve_stage(mu: float, s: SignalStructure, opts: SolverOptions = SolverOptions()) -> StageEquilibrium:
    """Approximate equilibrium of the stage game on the price grids.

    Phases run in ``opts.phases`` order and the first profile whose regret
    certificate is within ``opts.regret_tol`` is returned.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError(f"solve_stage needs mu in (0, 1), got {mu}")
    best = np.inf
    g0 = g1 = a = b = s0 = s1 = None
    for phase in opts.phases:
        if phase == "deterrence":
            eq = deterrence_candidate(mu, s, opts)
            if eq is not None:
                return eq
            continue
        if a is None:
            g0, g1 = price_grids(mu, s, opts.grid_size)
            a, b, s0, s1 = payoff_matrices(mu, g0, g1, s)
        for x, y in _phase_profiles(phase, a, b, opts):
            r = max(nash.regrets(a, b, x, y))
            best = min(best, r)
            if r <= opts.regret_tol:
                return _profile(mu, g0, g1, x, y, a, b, s0, s1, phase, opts)
    raise SolverError(f"no equilibrium within regret {opts.regret_tol} at mu={mu}", best)


def _phase_profiles(phase, a, b, opts):
    m, n = a.shape
    if phase == "pure":
        eqs = nash.pure_equilibria(a, b)
        if len(eqs):
            # deterministic pick: closest to the diagonal, then lowest prices
            i, j = min(eqs.tolist(), key=lambda ij: (abs(ij[0] - ij[1]), ij[0], ij[1]))
            x = np.zeros(m)
            y = np.zeros(n)
            x[i] = y[j] = 1.0
            yield x, y
    elif phase == "lemke_howson":
        for label in (0, m, m - 1, m + n - 1):
            try:
                yield nash.lemke_howson(a, b, init_label=label)
            except SolverError:
                continue
    elif phase == "fictitious_play":
        yield nash.fictitious_play(a, b, opts.fp_iters)
    elif phase == "support_enumeration":
        if max(m, n) <= opts.support_enum_max:
            yield from nash.support_enumeration(a, b)
    else:
        raise ValueError(f"unknown solver phase {phase!r}")


# -- threshold search ----------------------------------------------------------

class ThresholdError(RuntimeError):
    pass


@dataclass(frozen=True)
class Threshold:
    mu_bar: float
    bracket: tuple
    side: str


def find_threshold_mu(
    s: SignalStructure,
    side: str = "high",
    opts: SolverOptions = SolverOptions(),
    tol: float = 1e-3,
    scan: int = 41,
    solver=None,
    margin: float = 1e-3,
) -> Threshold:
    """Prior beyond which the favoured firm deters its rival.

    ``side="high"`` looks for deterrence by firm 0 on (1/2, 1) and
    ``side="low"`` for deterrence by firm 1 on (0, 1/2).  A coarse scan
    locates the switch and checks that every scanned prior beyond it is
    deterring; bisection then narrows the bracket to ``tol``.

    The scan stops ``margin`` short of the degenerate prior.  Closer in, the
    window of profitable upward deviations shrinks like (1 - mu)^2 while the
    grid step only shrinks like (1 - mu), so any fixed grid eventually
    reports deterrence that a finer grid removes.
    """
    solver = solver or (lambda m: solve_stage(m, s, opts))
    if side == "high":
        target = Classification.DETERRENCE_BY_0
        inner, outer = 0.5, 1.0
    elif side == "low":
        target = Classification.DETERRENCE_BY_1
        inner, outer = 0.5, 0.0
    else:
        raise ValueError(f"side must be 'high' or 'low', got {side!r}")
    if not s.bounded:
        raise ThresholdError("unbounded signals admit no deterrence threshold")

    def deters(m):
        return solver(m).classification is target

    if not 0.0 < margin < 0.5:
        raise ValueError(f"margin must lie in (0, 1/2), got {margin}")
    end = outer - margin if outer > inner else outer + margin
    pts = inner + (end - inner) * np.linspace(0.0, 1.0, scan + 1)[1:]
    flags = [deters(m) for m in pts]
    if not any(flags):
        raise ThresholdError(f"no deterrence found on the {side} side up to mu={pts[-1]:.6f}")
    first = flags.index(True)
    if not all(flags[first:]):
        bad = pts[first + flags[first:].index(False)]
        raise ThresholdError(f"non-monotone classification: deterrence at {pts[first]:.6f} but not at {bad:.6f}")
    near = inner if first == 0 else pts[first - 1]
    far = pts[first]
    while abs(far - near) > tol:
        mid = 0.5 * (near + far)
        if deters(mid):
            far = mid
        else:
            near = mid
    return Threshold(float(far), (float(min(near, far)), float(max(near, far))), side)


# -- memo cache -------------------------------------------------------------------

class StageCache:
    """Stage equilibria memoised by prior bucket.

    Keys are integer bucket indices ``floor(mu / resolution + 1/2)``; the
    equilibrium stored under a key is solved at the bucket centre.  Lookups
    are lock-free reads of a dict, insertions take a lock and keep the first
    value written.
    """

    def __init__(self, s: SignalStructure, opts: SolverOptions = SolverOptions(), resolution: float = 1e-3):
        self.s = s
        self.opts = opts
        self.resolution = resolution
        self.nbuckets = int(round(1.0 / resolution))
        self._store: dict[int, StageEquilibrium] = {}
        self._lock = threading.Lock()

    def bucket(self, mu: float) -> int:
        return K.bucket_of(float(mu), self.resolution, self.nbuckets)

    def centre(self, k: int) -> float:
        return k * self.resolution

    def __contains__(self, k: int) -> bool:
        return k in self._store

    def __len__(self) -> int:
        return len(self._store)

    def get(self, k: int) -> StageEquilibrium:
        eq = self._store.get(k)
        if eq is None:
            eq = solve_stage(self.centre(k), self.s, self.opts)
            with self._lock:
                eq = self._store.setdefault(k, eq)
        return eq

    def at(self, mu: float) -> StageEquilibrium:
        return self.get(self.bucket(mu))

    def items(self):
        return sorted(self._store.items())


def with_grid(opts: SolverOptions, n: int) -> SolverOptions:
    return replace(opts, grid_size=n)


__all__ = [
    "Classification",
    "DecisionCuts",
    "MixedStrategy",
    "PriceVector",
    "SignalError",
    "SolverError",
    "SolverOptions",
    "StageCache",
    "StageEquilibrium",
    "Threshold",
    "ThresholdError",
    "decision",
    "decision_cuts",
    "deterrence_candidate",
    "find_threshold_mu",
    "payoff_matrices",
    "payoffs",
    "price_grids",
    "sale_matrices",
    "solve_stage",
]
