"""Signal structures expressed through the law of the private belief.

A signal structure is stored as the density ``m`` of the private belief
``p(s)`` under the half-half state mixture.  The conditional densities follow
as ``g0 = 2 x m`` and ``g1 = 2 (1 - x) m``, so the CDFs are
``G0 = 2 K`` and ``G1 = 2 (M - K)`` with ``M`` the CDF of ``m`` and ``K`` its
first partial moment.  Every family supplies ``m``, ``M`` and ``K`` in closed
form; the game code reads the CDFs through monotone piecewise-linear tables.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, special

from . import _kernels as K

DEFAULT_KNOTS = 4096


class Family(str, enum.Enum):
    UNIFORM = "UniformBelief"
    TENT = "Tent"
    POWER = "PowerEndpoint"
    BETA = "BetaUnbounded"
    CUSTOM = "Custom"


class SignalKind(str, enum.Enum):
    UNBOUNDED = "Unbounded"
    BOUNDED_VANISHING = "BoundedVanishing"
    BOUNDED_NON_VANISHING = "BoundedNonVanishing"


class SignalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SignalStructure:
    family: Family
    params: dict
    support_lo: float
    support_hi: float
    density: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    mass: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    moment: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    knots: int = DEFAULT_KNOTS
    tab0: np.ndarray = field(default=None, repr=False)
    tab1: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.tab0 is None:
            xs = self.knot_points
            t0 = np.clip(2.0 * self.moment(xs), 0.0, 1.0)
            t1 = np.clip(2.0 * (self.mass(xs) - self.moment(xs)), 0.0, 1.0)
            for t in (t0, t1):
                t[0], t[-1] = 0.0, 1.0
                np.maximum.accumulate(t, out=t)
                t.setflags(write=False)
            object.__setattr__(self, "tab0", t0)
            object.__setattr__(self, "tab1", t1)

    # -- geometry ---------------------------------------------------------
    @property
    def bounded(self) -> bool:
        return self.support_lo > 0.0 and self.support_hi < 1.0

    @property
    def dx(self) -> float:
        return (self.support_hi - self.support_lo) / (self.knots - 1)

    @property
    def knot_points(self) -> np.ndarray:
        return np.linspace(self.support_lo, self.support_hi, self.knots)

    @property
    def tables(self):
        """(lo, dx, tab0, tab1) as consumed by the compiled kernels."""
        return self.support_lo, self.dx, self.tab0, self.tab1

    # -- densities --------------------------------------------------------
    def m(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.support_lo) & (x <= self.support_hi)
        return np.where(inside, self.density(np.clip(x, self.support_lo, self.support_hi)), 0.0)

    def g0(self, x):
        return 2.0 * np.asarray(x, dtype=float) * self.m(x)

    def g1(self, x):
        return 2.0 * (1.0 - np.asarray(x, dtype=float)) * self.m(x)

    # -- distribution functions --------------------------------------------
    def G0_exact(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.support_lo, self.support_hi)
        return 2.0 * self.moment(x)

    def G1_exact(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.support_lo, self.support_hi)
        return 2.0 * (self.mass(x) - self.moment(x))

    def G0(self, x):
        return _table_eval(x, self.support_lo, self.dx, self.tab0)

    def G1(self, x):
        return _table_eval(x, self.support_lo, self.dx, self.tab1)

    def G_mu(self, x, mu):
        """CDF of the private belief when the state is drawn from prior ``mu``."""
        return mu * self.G0(x) + (1.0 - mu) * self.G1(x)

    def quantile(self, u, state: int):
        tab = self.tab0 if state == 0 else self.tab1
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            return K.quantile_at(float(u), self.support_lo, self.dx, tab)
        return _quantile_array(u, self.support_lo, self.dx, tab)

    def sample_belief(self, state: int, rng: np.random.Generator, size=None):
        """Draw p(s) under state ``state`` by inverting the CDF table."""
        if state not in (0, 1):
            raise SignalError(f"state must be 0 or 1, got {state!r}")
        return self.quantile(rng.random(size), state)

    def lr_ratio(self, r):
        """G1(r)/G0(r); raises at or below the lower support bound."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= self.support_lo):
            raise SignalError("likelihood ratio undefined at or below the support's lower end")
        return self.G1(r) / self.G0(r)


def _table_eval(x, lo, dx, tab):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return K.cdf_at(float(x), lo, dx, tab)
    return K.cdf_at_array(x, lo, dx, tab)


def _quantile_array(u, lo, dx, tab):
    i = np.searchsorted(tab, u, side="right") - 1
    i = np.clip(i, 0, tab.shape[0] - 2)
    return lo + (i + (u - tab[i]) / (tab[i + 1] - tab[i])) * dx


# -- families ---------------------------------------------------------------

def _piecewise_linear(xk, mk):
    """Closed-form m, M, K for a density linear between knots ``xk``."""
    xk = np.asarray(xk, dtype=float)
    mk = np.asarray(mk, dtype=float)
    w = np.diff(xk)
    slope = np.diff(mk) / w
    seg_mass = mk[:-1] * w + slope * w**2 / 2.0
    seg_mom = xk[:-1] * mk[:-1] * w + (xk[:-1] * slope + mk[:-1]) * w**2 / 2.0 + slope * w**3 / 3.0
    cum_mass = np.concatenate([[0.0], np.cumsum(seg_mass)])
    cum_mom = np.concatenate([[0.0], np.cumsum(seg_mom)])

    def locate(x):
        return np.clip(np.searchsorted(xk, x, side="right") - 1, 0, len(w) - 1)

    def density(x):
        return np.interp(x, xk, mk)

    def mass(x):
        i = locate(x)
        d = x - xk[i]
        return cum_mass[i] + mk[i] * d + slope[i] * d**2 / 2.0

    def moment(x):
        i = locate(x)
        d = x - xk[i]
        a = xk[i]
        return cum_mom[i] + a * mk[i] * d + (a * slope[i] + mk[i]) * d**2 / 2.0 + slope[i] * d**3 / 3.0

    return density, mass, moment


def _scaled_beta(lo, hi, shape):
    """Symmetric Beta(shape, shape) density rescaled onto [lo, hi]."""
    w = hi - lo
    norm = special.beta(shape, shape)

    def density(x):
        y = (x - lo) / w
        return y ** (shape - 1.0) * (1.0 - y) ** (shape - 1.0) / (norm * w)

    def mass(x):
        return special.betainc(shape, shape, (x - lo) / w)

    def moment(x):
        y = (x - lo) / w
        # E[Y; Y<y] for the symmetric beta is I_y(a+1, a) / 2
        return lo * special.betainc(shape, shape, y) + w * 0.5 * special.betainc(shape + 1.0, shape, y)

    return density, mass, moment


def _check_support(lo, hi, symmetric=True):
    if not (0.0 <= lo < hi <= 1.0):
        raise SignalError(f"support must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]")
    if symmetric and abs(lo + hi - 1.0) > 1e-12:
        raise SignalError(f"built-in families need lo + hi = 1, got lo={lo}, hi={hi}")


def make_family(tag, knots: int = DEFAULT_KNOTS, **params) -> SignalStructure:
    """Instantiate a built-in family.

    ``UniformBelief``, ``Tent`` and ``PowerEndpoint`` take ``lo`` (and
    optionally ``hi``, defaulting to ``1 - lo``); ``PowerEndpoint`` also takes
    ``kappa``.  ``BetaUnbounded`` takes no parameters.  ``Custom`` takes
    ``x`` and ``m`` arrays or a ``path`` to a two-column text table.
    """
    tag = Family(tag)
    if tag is Family.CUSTOM:
        return make_custom(knots=knots, **params)
    if tag is Family.BETA:
        if params:
            raise SignalError(f"BetaUnbounded takes no parameters, got {sorted(params)}")
        density, mass, moment = _piecewise_beta_unbounded()
        return SignalStructure(tag, {}, 0.0, 1.0, density, mass, moment, knots)

    lo = float(params.pop("lo"))
    hi = float(params.pop("hi", 1.0 - lo))
    _check_support(lo, hi)
    if tag is Family.UNIFORM:
        fns = _piecewise_linear([lo, hi], [1.0 / (hi - lo)] * 2)
        rec = {"lo": lo, "hi": hi}
    elif tag is Family.TENT:
        fns = _piecewise_linear([lo, (lo + hi) / 2.0, hi], [0.0, 2.0 / (hi - lo), 0.0])
        rec = {"lo": lo, "hi": hi}
    else:
        kappa = float(params.pop("kappa"))
        if kappa < 0:
            raise SignalError(f"kappa must be non-negative, got {kappa}")
        fns = _scaled_beta(lo, hi, kappa + 1.0)
        rec = {"lo": lo, "hi": hi, "kappa": kappa}
    if params:
        raise SignalError(f"unexpected parameters for {tag.value}: {sorted(params)}")
    return SignalStructure(tag, rec, lo, hi, *fns, knots)


def _piecewise_beta_unbounded():
    def density(x):
        return 6.0 * x * (1.0 - x)

    def mass(x):
        return 3.0 * x**2 - 2.0 * x**3

    def moment(x):
        return 2.0 * x**3 - 1.5 * x**4

    return density, mass, moment


def read_density_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Two columns (x, m), comma or whitespace separated; one header row allowed."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise SignalError(f"cannot read density table: {exc}") from None
    rows = [ln.replace(",", " ") for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if rows:
        try:
            [float(v) for v in rows[0].split()]
        except ValueError:
            rows = rows[1:]
    try:
        data = np.loadtxt(rows, ndmin=2)
    except ValueError as exc:
        raise SignalError(f"{path}: {exc}") from None
    if data.shape[1] != 2:
        raise SignalError(f"{path}: expected two columns (x, m), got {data.shape[1]}")
    return data[:, 0], data[:, 1]


def make_custom(x=None, m=None, path=None, knots: int = DEFAULT_KNOTS, tol: float = 1e-6):
    """Custom family from a tabulated density, linear between the given points."""
    if path is not None:
        x, m = read_density_table(path)
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    if x.ndim != 1 or x.shape != m.shape or x.size < 2:
        raise SignalError("custom table needs matching 1-d x and m with at least two rows")
    if np.any(np.diff(x) <= 0):
        raise SignalError("custom table x column must be strictly increasing")
    if np.any(m < 0):
        raise SignalError("custom density must be non-negative")
    _check_support(x[0], x[-1], symmetric=False)
    s = SignalStructure(
        Family.CUSTOM,
        {"x": x.tolist(), "m": m.tolist()},
        float(x[0]),
        float(x[-1]),
        *_piecewise_linear(x, m),
        knots,
    )
    report = validate(s)
    if report.residuals["mass"] > tol or report.residuals["mean"] > tol:
        raise SignalError(f"custom density fails validation: {report.residuals}")
    return s


def from_spec(spec: dict, knots: int = DEFAULT_KNOTS) -> SignalStructure:
    """Build a structure from a config mapping ``{"family": tag, **params}``."""
    spec = dict(spec)
    tag = spec.pop("family")
    return make_family(tag, knots=knots, **spec)


# -- validation -------------------------------------------------------------

@dataclass
class ValidationReport:
    residuals: dict
    tol: float
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.residuals.items() if not v <= self.tol]


def validate(s: SignalStructure, tol: float = 1e-8, grid: int = 1001) -> ValidationReport:
    """Numeric residuals of every structural invariant; never raises."""
    res = {}
    lo, hi = s.support_lo, s.support_hi
    breaks = _breakpoints(s)
    quad = dict(limit=200, epsabs=1e-13, epsrel=1e-13)
    try:
        mass = sum(integrate.quad(lambda t: float(s.m(t)), a, b, **quad)[0] for a, b in breaks)
        mean = sum(integrate.quad(lambda t: float(t * s.m(t)), a, b, **quad)[0] for a, b in breaks)
        int_g0 = sum(integrate.quad(lambda t: float(s.g0(t)), a, b, **quad)[0] for a, b in breaks)
        int_g1 = sum(integrate.quad(lambda t: float(s.g1(t)), a, b, **quad)[0] for a, b in breaks)
        res["mass"] = abs(mass - 1.0)
        res["mean"] = abs(mean - 0.5)
        res["int_g0"] = abs(int_g0 - 1.0)
        res["int_g1"] = abs(int_g1 - 1.0)
        xs = np.linspace(lo, hi, grid)[1:-1]
        res["consistency"] = float(np.max(np.abs(s.g0(xs) * (1.0 - xs) - s.g1(xs) * xs)))
        # closed-form CDFs agree with quadrature at interior points
        probe = np.linspace(lo, hi, 9)[1:-1]
        q0 = np.array([_quad_upto(s.g0, lo, p, breaks, quad) for p in probe])
        res["cdf0"] = float(np.max(np.abs(q0 - s.G0_exact(probe))))
        res["terminal"] = float(max(abs(s.G0_exact(hi) - 1.0), abs(s.G1_exact(hi) - 1.0)))
        d0 = np.diff(s.G0_exact(xs))
        d1 = np.diff(s.G1_exact(xs))
        res["monotone"] = float(max(0.0, -d0.min(), -d1.min()))
        res["shared_support"] = float(np.max(np.abs((s.g0(xs) > 0) != (s.g1(xs) > 0))))
    except Exception as exc:  # report, never abort
        res["evaluation"] = float("inf")
        return ValidationReport(res, tol, [f"{type(exc).__name__}: {exc}"])
    return ValidationReport(res, tol)


def _breakpoints(s: SignalStructure):
    pts = [s.support_lo, s.support_hi]
    if s.family is Family.TENT:
        pts.append((s.support_lo + s.support_hi) / 2.0)
    elif s.family is Family.CUSTOM:
        pts.extend(s.params.get("x", ()))
    pts = sorted(set(pts))
    return list(zip(pts[:-1], pts[1:]))


def _quad_upto(f, lo, x, breaks, quad):
    total = 0.0
    for a, b in breaks:
        if a >= x:
            break
        total += integrate.quad(lambda t: float(f(t)), a, min(b, x), **quad)[0]
    return total


# -- classification -----------------------------------------------------------

@dataclass(frozen=True)
class SignalClass:
    kind: SignalKind
    # (g0(lo), g1(lo), g0(hi), g1(hi))
    endpoint_densities: tuple
    stable: bool = True


def classify(s: SignalStructure, zero_tol: float = 1e-4) -> SignalClass:
    """Unbounded / bounded with or without vanishing likelihood."""
    lo, hi = s.support_lo, s.support_hi
    if lo == 0.0 and hi == 1.0:
        return SignalClass(SignalKind.UNBOUNDED, _endpoint_values(s), True)
    if s.family is Family.CUSTOM:
        values, stable = _one_sided_limits(s, zero_tol)
    else:
        values, stable = _endpoint_values(s), True
    vanishing = all(v <= zero_tol for v in values)
    kind = SignalKind.BOUNDED_VANISHING if vanishing else SignalKind.BOUNDED_NON_VANISHING
    return SignalClass(kind, values, stable)


def _endpoint_values(s):
    lo, hi = s.support_lo, s.support_hi
    return tuple(float(v) for v in (s.g0(lo), s.g1(lo), s.g0(hi), s.g1(hi)))


def _one_sided_limits(s, zero_tol):
    """Difference quotients of the CDFs on windows 2**-k, k = 6..16.

    The last two quotients are combined by Richardson extrapolation (2 q(h/2)
    - q(h)) to cancel the O(h) bias; a limit within ``zero_tol`` of zero
    counts as vanishing.  The estimate is flagged unstable when successive
    extrapolations disagree.
    """
    lo, hi = s.support_lo, s.support_hi
    hs = 2.0 ** -np.arange(6, 17)
    hs = hs[hs < (hi - lo)]
    out, stable = [], True
    for left, cdf in ((True, s.G0_exact), (True, s.G1_exact), (False, s.G0_exact), (False, s.G1_exact)):
        if left:
            q = np.array([cdf(lo + h) / h for h in hs])
        else:
            q = np.array([(1.0 - cdf(hi - h)) / h for h in hs])
        ext = 2.0 * q[1:] - q[:-1]
        est = float(ext[-1])
        if abs(ext[-1] - ext[-2]) > 1e-3 * max(1.0, abs(est)):
            stable = False
        out.append(0.0 if abs(est) <= zero_tol else est)
    return tuple(out), stable
