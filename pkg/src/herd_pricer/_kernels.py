"""Scalar and loop kernels shared by every module.

Each function here is plain Python over floats and numpy arrays so that the
same source compiles under numba and runs unmodified without it.  The
arithmetic order is fixed: the trajectory replay invariant relies on the
scalar path reproducing the compiled path bit for bit.
"""
from __future__ import annotations

import numpy as np

from ._backend import jit

# action codes used in every array-valued record
BUY0 = 0
BUY1 = 1
EXIT = 2


@jit
def cdf_at(x, lo, dx, tab):
    """Piecewise-linear CDF on uniform knots ``lo + i*dx``; tab[0]=0, tab[-1]=1."""
    n = tab.shape[0]
    if x <= lo:
        return 0.0
    f = (x - lo) / dx
    # the tolerance keeps the upper support point itself from landing a hair
    # inside the last cell after rounding
    if f >= n - 1 - 1e-9:
        return 1.0
    i = int(f)
    w = f - i
    return tab[i] + w * (tab[i + 1] - tab[i])


@jit
def quantile_at(u, lo, dx, tab):
    """Exact inverse of :func:`cdf_at` for u in [0, 1)."""
    n = tab.shape[0]
    a = 0
    b = n - 1
    # invariant: tab[a] <= u < tab[b]
    while b - a > 1:
        c = (a + b) // 2
        if tab[c] <= u:
            a = c
        else:
            b = c
    step = tab[a + 1] - tab[a]
    return lo + (a + (u - tab[a]) / step) * dx


@jit
def posterior(mu, p):
    den = mu * p + (1.0 - mu) * (1.0 - p)
    if den == 0.0:
        return np.nan
    return mu * p / den


@jit
def decision_cuts(mu, tau0, tau1):
    """Return (full, v0, v1) private-belief cutoffs for prior ``mu``."""
    if tau0 + tau1 <= 1.0:
        q = 1.0 + tau0 - tau1
        v = (1.0 - mu) * q / (2.0 * mu - (2.0 * mu - 1.0) * q)
        v = min(max(v, 0.0), 1.0)
        return True, v, v
    v0 = (1.0 - mu) * tau0 / (mu - (2.0 * mu - 1.0) * tau0)
    a = (1.0 - mu) * (1.0 - tau1)
    v1 = a / (a + mu * tau1)
    v0 = min(max(v0, 0.0), 1.0)
    v1 = min(max(v1, 0.0), 1.0)
    return False, v0, v1


@jit
def act_from_belief(p, mu, full, v0, v1):
    """Consumer action from the private belief, ties resolved as in the best reply."""
    if full:
        if p > v0:
            return BUY0
        if p < v0:
            return BUY1
        if mu >= 0.5:
            return BUY0
        return BUY1
    if p >= v0:
        return BUY0
    if p <= v1:
        return BUY1
    return EXIT


@jit
def action_ratio(action, full, v0, v1, lo, dx, tab0, tab1):
    """Likelihood ratio P(action | w=0) / P(action | w=1); nan when both vanish."""
    if action == BUY0:
        num = 1.0 - cdf_at(v0, lo, dx, tab0)
        den = 1.0 - cdf_at(v0, lo, dx, tab1)
    elif action == BUY1:
        cut = v0 if full else v1
        num = cdf_at(cut, lo, dx, tab0)
        den = cdf_at(cut, lo, dx, tab1)
    else:
        num = cdf_at(v0, lo, dx, tab0) - cdf_at(v1, lo, dx, tab0)
        den = cdf_at(v0, lo, dx, tab1) - cdf_at(v1, lo, dx, tab1)
    if den <= 0.0:
        if num <= 0.0:
            return np.nan
        return np.inf
    return num / den


@jit
def update_mu(mu, ratio):
    """Multiply the odds of state 0 by ``ratio``; vertices and ratio 1 are absorbing."""
    if mu <= 0.0 or mu >= 1.0 or ratio == 1.0:
        return mu
    if ratio == np.inf:
        return 1.0
    odds = mu / (1.0 - mu) * ratio
    return odds / (1.0 + odds)


@jit
def sale_matrices_loop(mu, grid0, grid1, lo, dx, tab0, tab1):
    """Sale probabilities of both firms over the price grid product."""
    m = grid0.shape[0]
    n = grid1.shape[0]
    s0 = np.empty((m, n))
    s1 = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            full, v0, v1 = decision_cuts(mu, grid0[i], grid1[j])
            g_v0 = mu * cdf_at(v0, lo, dx, tab0) + (1.0 - mu) * cdf_at(v0, lo, dx, tab1)
            s0[i, j] = 1.0 - g_v0
            if full:
                s1[i, j] = g_v0
            else:
                s1[i, j] = mu * cdf_at(v1, lo, dx, tab0) + (1.0 - mu) * cdf_at(v1, lo, dx, tab1)
    return s0, s1


def cdf_at_array(x, lo, dx, tab):
    """Vectorised :func:`cdf_at` with identical arithmetic."""
    x = np.asarray(x, dtype=float)
    n = tab.shape[0]
    f = (x - lo) / dx
    below = x <= lo
    above = f >= n - 1 - 1e-9
    fc = np.where(below | above, 0.0, f)
    i = fc.astype(np.int64)
    w = fc - i
    out = tab[i] + w * (tab[i + 1] - tab[i])
    out = np.where(below, 0.0, out)
    return np.where(above, 1.0, out)


def decision_cuts_array(mu, tau0, tau1):
    """Vectorised :func:`decision_cuts` (``mu`` may be scalar or array)."""
    mu, tau0, tau1 = np.broadcast_arrays(
        np.asarray(mu, dtype=float), np.asarray(tau0, dtype=float), np.asarray(tau1, dtype=float)
    )
    full = tau0 + tau1 <= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = 1.0 + tau0 - tau1
        v_full = (1.0 - mu) * q / (2.0 * mu - (2.0 * mu - 1.0) * q)
        v0_nf = (1.0 - mu) * tau0 / (mu - (2.0 * mu - 1.0) * tau0)
        a = (1.0 - mu) * (1.0 - tau1)
        v1_nf = a / (a + mu * tau1)
    v0 = np.clip(np.where(full, v_full, v0_nf), 0.0, 1.0)
    v1 = np.clip(np.where(full, v_full, v1_nf), 0.0, 1.0)
    return full, v0, v1


def sale_matrices_numpy(mu, grid0, grid1, lo, dx, tab0, tab1):
    full, v0, v1 = decision_cuts_array(mu, grid0[:, None], grid1[None, :])
    g_v0 = mu * cdf_at_array(v0, lo, dx, tab0) + (1.0 - mu) * cdf_at_array(v0, lo, dx, tab1)
    g_v1 = mu * cdf_at_array(v1, lo, dx, tab0) + (1.0 - mu) * cdf_at_array(v1, lo, dx, tab1)
    return 1.0 - g_v0, np.where(full, g_v0, g_v1)


@jit
def fictitious_play_loop(a, b, iters):
    """Discrete fictitious play; returns the empirical action frequencies."""
    m, n = a.shape
    u0 = np.zeros(m)
    u1 = np.zeros(n)
    c0 = np.zeros(m)
    c1 = np.zeros(n)
    i = 0
    j = 0
    for _ in range(iters):
        c0[i] += 1.0
        c1[j] += 1.0
        for k in range(m):
            u0[k] += a[k, j]
        for k in range(n):
            u1[k] += b[i, k]
        i = np.argmax(u0)
        j = np.argmax(u1)
    return c0 / iters, c1 / iters


def fictitious_play_numpy(a, b, iters):
    m, n = a.shape
    u0 = np.zeros(m)
    u1 = np.zeros(n)
    c0 = np.zeros(m)
    c1 = np.zeros(n)
    i = j = 0
    for _ in range(iters):
        c0[i] += 1.0
        c1[j] += 1.0
        u0 += a[:, j]
        u1 += b[i, :]
        i = int(np.argmax(u0))
        j = int(np.argmax(u1))
    return c0 / iters, c1 / iters


# -- trajectories -------------------------------------------------------------

# status codes returned by the trajectory kernels
NEED_BUCKET = 0
LEARNED_LOW = 1
LEARNED_HIGH = 2
HERD = 3
HORIZON = 4
FREEZE_BROKEN = 5
ZERO_PROB = 6
SOLVER_FAILED = 7

# stage kinds stored per bucket
KIND_MIXED = 0
KIND_DETER0 = 1
KIND_DETER1 = 2

SNAP_TOL = 1e-12


@jit
def bucket_of(mu, res, nb):
    k = int(np.floor(mu / res + 0.5))
    if k < 1:
        return 1
    if k > nb - 1:
        return nb - 1
    return k


@jit
def sample_index(cw, u):
    """First index whose cumulative weight exceeds ``u``."""
    a = 0
    b = cw.shape[0] - 1
    while a < b:
        c = (a + b) // 2
        if cw[c] > u:
            b = c
        else:
            a = c + 1
    return a


@jit
def grid_bounds(mu, lo, hi):
    """End points of both firms' price grids at prior ``mu``."""
    a_lo = posterior(mu, lo)
    a_hi = posterior(mu, hi)
    return max(0.0, 2.0 * a_lo - 1.0), a_hi, max(0.0, 1.0 - 2.0 * a_hi), 1.0 - a_lo


@jit
def grid_point(i, n, start, stop):
    """Point ``i`` of ``np.linspace(start, stop, n)``, bit for bit."""
    if i == n - 1:
        return stop
    return i * ((stop - start) / (n - 1)) + start


@jit
def deterrence_prices(kind, mu, lo, hi):
    if kind == KIND_DETER0:
        return max(0.0, 2.0 * posterior(mu, lo) - 1.0), 0.0
    return 0.0, max(0.0, 1.0 - 2.0 * posterior(mu, hi))


@jit
def snap_cuts(kind, full, v0, v1, lo, hi):
    """Pin the cut on the support edge it is meant to sit on."""
    if kind == KIND_DETER0 and abs(v0 - lo) <= SNAP_TOL:
        v0 = lo
        if full:
            v1 = lo
    elif kind == KIND_DETER1 and abs(v1 - hi) <= SNAP_TOL:
        v1 = hi
        if full:
            v0 = hi
    return v0, v1


@jit
def correct_prob(omega, full, v0, v1, lo, dx, tab0, tab1):
    if omega == 0:
        return 1.0 - cdf_at(v0, lo, dx, tab0)
    return cdf_at(v1, lo, dx, tab1)


@jit
def trajectory_steps(t, mu, onset, omega, uni, lo, hi, dx, tab0, tab1, eps, probe,
                     res, solved, kind, c0, c1,
                     o_mu, o_tau0, o_tau1, o_act, o_v0, o_v1, o_corr):
    """Advance one trajectory from period ``t`` until it stops or needs a bucket.

    Returns (t, mu, onset, status, bucket).  On ``NEED_BUCKET`` the caller
    solves the bucket and calls again with the returned state.
    """
    nb = solved.shape[0]
    n = c0.shape[1]
    tab = tab0 if omega == 0 else tab1
    horizon = uni.shape[0]
    while t < horizon:
        if mu <= eps:
            return t, mu, onset, LEARNED_LOW, -1
        if mu >= 1.0 - eps:
            return t, mu, onset, LEARNED_HIGH, -1
        k = bucket_of(mu, res, nb)
        if not solved[k]:
            return t, mu, onset, NEED_BUCKET, k
        kd = kind[k]
        if kd < 0:
            return t, mu, onset, SOLVER_FAILED, k
        if kd == KIND_MIXED:
            s0, e0, s1, e1 = grid_bounds(mu, lo, hi)
            tau0 = grid_point(sample_index(c0[k], uni[t, 0]), n, s0, e0)
            tau1 = grid_point(sample_index(c1[k], uni[t, 1]), n, s1, e1)
        else:
            tau0, tau1 = deterrence_prices(kd, mu, lo, hi)
        full, v0, v1 = decision_cuts(mu, tau0, tau1)
        if kd != KIND_MIXED:
            v0, v1 = snap_cuts(kd, full, v0, v1, lo, hi)
        p = quantile_at(uni[t, 2], lo, dx, tab)
        a = act_from_belief(p, mu, full, v0, v1)
        ratio = action_ratio(a, full, v0, v1, lo, dx, tab0, tab1)
        o_mu[t] = mu
        o_tau0[t] = tau0
        o_tau1[t] = tau1
        o_act[t] = a
        o_v0[t] = v0
        o_v1[t] = v1
        o_corr[t] = correct_prob(omega, full, v0, v1, lo, dx, tab0, tab1)
        if np.isnan(ratio):
            return t, mu, onset, ZERO_PROB, k
        nxt = update_mu(mu, ratio)
        if kd != KIND_MIXED:
            if onset < 0:
                onset = t
            if nxt != mu:
                return t + 1, nxt, onset, FREEZE_BROKEN, k
            if t - onset >= probe:
                return t + 1, nxt, onset, HERD, k
        mu = nxt
        t += 1
    return t, mu, onset, HORIZON, -1


def trajectory_batch_numpy(mu0, omega, uni, lo, hi, dx, tab0, tab1, eps, probe,
                           res, table, outs):
    """Lock-step version of :func:`trajectory_steps` over many runs.

    ``uni`` has shape (runs, T, 3); ``table`` must expose ``ensure(ks)`` and
    the arrays ``solved, kind, c0, c1``.  Every run uses the same
    scalar formulas as the compiled kernel, vectorised elementwise.
    """
    runs, horizon, _ = uni.shape
    nb = table.solved.shape[0]
    n = table.c0.shape[1]
    mu = np.array(mu0, dtype=float)
    onset = np.full(runs, -1, dtype=np.int64)
    status = np.full(runs, -1, dtype=np.int64)
    length = np.zeros(runs, dtype=np.int64)
    o_mu, o_tau0, o_tau1, o_act, o_v0, o_v1, o_corr = outs
    ridx = np.arange(runs)
    tabs = np.stack([tab0, tab1])
    for t in range(horizon):
        live = status < 0
        low = live & (mu <= eps)
        high = live & ~low & (mu >= 1.0 - eps)
        status[low] = LEARNED_LOW
        status[high] = LEARNED_HIGH
        length[low | high] = t
        live &= ~(low | high)
        r = ridx[live]
        if r.size == 0:
            break
        m = mu[r]
        k = np.clip(np.floor(m / res + 0.5).astype(np.int64), 1, nb - 1)
        table.ensure(np.unique(k))
        kd = table.kind[k]
        failed = kd < 0
        if failed.any():
            status[r[failed]] = SOLVER_FAILED
            length[r[failed]] = t
            keep = ~failed
            r, m, k, kd = r[keep], m[keep], k[keep], kd[keep]
            if r.size == 0:
                continue
        mixed = kd == KIND_MIXED
        tau0 = np.empty(r.size)
        tau1 = np.empty(r.size)
        # mixed buckets: inverse-CDF draw of each firm's price
        with np.errstate(divide="ignore", invalid="ignore"):
            a_lo = m * lo / (m * lo + (1.0 - m) * (1.0 - lo))
            a_hi = m * hi / (m * hi + (1.0 - m) * (1.0 - hi))
        if mixed.any():
            km = k[mixed]
            rm = r[mixed]
            i0 = _first_above(table.c0[km], uni[rm, t, 0])
            i1 = _first_above(table.c1[km], uni[rm, t, 1])
            tau0[mixed] = _grid_point_array(i0, n, np.maximum(0.0, 2.0 * a_lo[mixed] - 1.0), a_hi[mixed])
            tau1[mixed] = _grid_point_array(i1, n, np.maximum(0.0, 1.0 - 2.0 * a_hi[mixed]), 1.0 - a_lo[mixed])
        d0 = kd == KIND_DETER0
        d1 = kd == KIND_DETER1
        tau0[d0] = np.maximum(0.0, 2.0 * a_lo[d0] - 1.0)
        tau1[d0] = 0.0
        tau0[d1] = 0.0
        tau1[d1] = np.maximum(0.0, 1.0 - 2.0 * a_hi[d1])
        full, v0, v1 = decision_cuts_array(m, tau0, tau1)
        s0 = d0 & (np.abs(v0 - lo) <= SNAP_TOL)
        v0 = np.where(s0, lo, v0)
        v1 = np.where(s0 & full, lo, v1)
        s1 = d1 & (np.abs(v1 - hi) <= SNAP_TOL)
        v1 = np.where(s1, hi, v1)
        v0 = np.where(s1 & full, hi, v0)
        om = omega[r]
        p = _quantile_rows(uni[r, t, 2], lo, dx, tabs, om)
        a = _act_array(p, m, full, v0, v1)
        ratio = _ratio_array(a, full, v0, v1, lo, dx, tab0, tab1)
        o_mu[r, t] = m
        o_tau0[r, t] = tau0
        o_tau1[r, t] = tau1
        o_act[r, t] = a
        o_v0[r, t] = v0
        o_v1[r, t] = v1
        o_corr[r, t] = np.where(om == 0, 1.0 - cdf_at_array(v0, lo, dx, tab0), cdf_at_array(v1, lo, dx, tab1))
        bad = np.isnan(ratio)
        nxt = _update_array(m, ratio)
        det = ~mixed
        first = det & (onset[r] < 0)
        onset[r[first]] = t
        broken = det & ~bad & (nxt != m)
        done = det & ~bad & ~broken & (t - onset[r] >= probe)
        mu[r] = np.where(bad, m, nxt)
        status[r[bad]] = ZERO_PROB
        length[r[bad]] = t
        status[r[broken]] = FREEZE_BROKEN
        status[r[done]] = HERD
        length[r[broken | done]] = t + 1
    tail = status < 0
    # runs still live after the last period: check the final belief once more
    low = tail & (mu <= eps)
    high = tail & ~low & (mu >= 1.0 - eps)
    status[low] = LEARNED_LOW
    status[high] = LEARNED_HIGH
    rest = tail & ~(low | high)
    status[rest] = HORIZON
    length[tail] = horizon
    return mu, onset, status, length


def _grid_point_array(i, n, start, stop):
    return np.where(i == n - 1, stop, i * ((stop - start) / (n - 1)) + start)


def _first_above(cw, u):
    return (cw <= u[:, None]).sum(axis=1)


def _quantile_rows(u, lo, dx, tabs, om):
    out = np.empty(u.shape[0])
    for w in (0, 1):
        sel = om == w
        if not sel.any():
            continue
        tab = tabs[w]
        uu = u[sel]
        a = np.searchsorted(tab, uu, side="right") - 1
        a = np.clip(a, 0, tab.shape[0] - 2)
        step = tab[a + 1] - tab[a]
        out[sel] = lo + (a + (uu - tab[a]) / step) * dx
    return out


def _act_array(p, mu, full, v0, v1):
    tie0 = mu >= 0.5
    act_full = np.where(p > v0, BUY0, np.where(p < v0, BUY1, np.where(tie0, BUY0, BUY1)))
    act_nf = np.where(p >= v0, BUY0, np.where(p <= v1, BUY1, EXIT))
    return np.where(full, act_full, act_nf).astype(np.int64)


def _ratio_array(a, full, v0, v1, lo, dx, tab0, tab1):
    f0v0 = cdf_at_array(v0, lo, dx, tab0)
    f1v0 = cdf_at_array(v0, lo, dx, tab1)
    cut = np.where(full, v0, v1)
    f0c = cdf_at_array(cut, lo, dx, tab0)
    f1c = cdf_at_array(cut, lo, dx, tab1)
    f0v1 = cdf_at_array(v1, lo, dx, tab0)
    f1v1 = cdf_at_array(v1, lo, dx, tab1)
    num = np.where(a == BUY0, 1.0 - f0v0, np.where(a == BUY1, f0c, f0v0 - f0v1))
    den = np.where(a == BUY0, 1.0 - f1v0, np.where(a == BUY1, f1c, f1v0 - f1v1))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out = np.where(den <= 0.0, np.where(num <= 0.0, np.nan, np.inf), out)
    return out


def _update_array(mu, ratio):
    with np.errstate(divide="ignore", invalid="ignore"):
        odds = mu / (1.0 - mu) * ratio
        out = odds / (1.0 + odds)
    out = np.where(ratio == np.inf, 1.0, out)
    keep = (mu <= 0.0) | (mu >= 1.0) | (ratio == 1.0)
    return np.where(keep, mu, out)
