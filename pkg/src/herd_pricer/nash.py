"""Equilibrium search for finite two-player (bimatrix) games.

Row player payoffs ``a``, column player payoffs ``b``, both shaped (m, n).
"""
from __future__ import annotations

import itertools

import numpy as np

from . import _kernels as K
from ._backend import USE_NUMBA


class SolverError(RuntimeError):
    def __init__(self, message, best_regret=np.inf):
        super().__init__(message)
        self.best_regret = best_regret


def regrets(a, b, x, y):
    """Largest unilateral gain for each player against the mixed profile (x, y)."""
    ay = a @ y
    xb = x @ b
    return float(ay.max() - x @ ay), float(xb.max() - xb @ y)


def pure_equilibria(a, b, tol=1e-12):
    """All (i, j) where both pure actions are best replies within ``tol``."""
    best_row = a >= a.max(axis=0, keepdims=True) - tol
    best_col = b >= b.max(axis=1, keepdims=True) - tol
    return np.argwhere(best_row & best_col)


def fictitious_play(a, b, iters=20_000):
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if USE_NUMBA:
        return K.fictitious_play_loop(a, b, iters)
    return K.fictitious_play_numpy(a, b, iters)


def lemke_howson(a, b, init_label=0, tol=1e-12, max_pivots=None):
    """One equilibrium by complementary pivoting with a lexicographic ratio test.

    Labels 0..m-1 belong to row actions, m..m+n-1 to column actions.  Raises
    ``SolverError`` if the path does not close within ``max_pivots``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = a.shape
    ap = a - a.min() + 1.0
    bp = b - b.min() + 1.0
    # tableau over x: B'^T x + s = 1 ; columns = labels 0..m+n-1, then rhs
    tx = np.hstack([bp.T, np.eye(n), np.ones((n, 1))])
    # tableau over y: r + A' y = 1
    ty = np.hstack([np.eye(m), ap, np.ones((m, 1))])
    basis_x = list(range(m, m + n))
    basis_y = list(range(m))
    # basis-inverse columns, used to break ratio ties lexicographically
    lex_x = np.arange(m, m + n)
    lex_y = np.arange(m)

    if max_pivots is None:
        max_pivots = 50 * (m + n) + 1000
    entering = init_label
    use_x = init_label < m
    for _ in range(max_pivots):
        tab, basis, lex = (tx, basis_x, lex_x) if use_x else (ty, basis_y, lex_y)
        row = _lex_min_ratio(tab, entering, lex, tol)
        if row < 0:
            raise SolverError("unbounded pivot column in Lemke-Howson")
        leaving = basis[row]
        _pivot(tab, row, entering)
        basis[row] = entering
        if leaving == init_label:
            break
        entering = leaving
        use_x = not use_x
    else:
        raise SolverError(f"Lemke-Howson did not terminate in {max_pivots} pivots")

    x = np.zeros(m)
    y = np.zeros(n)
    for r, lab in enumerate(basis_x):
        if lab < m:
            x[lab] = tx[r, -1]
    for r, lab in enumerate(basis_y):
        if lab >= m:
            y[lab - m] = ty[r, -1]
    x = np.clip(x, 0.0, None)
    y = np.clip(y, 0.0, None)
    if x.sum() <= 0 or y.sum() <= 0:
        raise SolverError("Lemke-Howson returned the artificial equilibrium")
    return x / x.sum(), y / y.sum()


def _lex_min_ratio(tab, col, lex_cols, tol):
    c = tab[:, col]
    rows = np.flatnonzero(c > tol)
    if rows.size == 0:
        return -1
    cand = rows
    keys = [tab[:, -1]] + [tab[:, k] for k in lex_cols]
    for key in keys:
        r = key[cand] / c[cand]
        best = r.min()
        scale = max(1.0, abs(best))
        cand = cand[r <= best + tol * scale]
        if cand.size == 1:
            return int(cand[0])
    return int(cand[0])


def _pivot(tab, row, col):
    tab[row] /= tab[row, col]
    factor = tab[:, col].copy()
    factor[row] = 0.0
    tab -= np.outer(factor, tab[row])


def support_enumeration(a, b, max_support=None, tol=1e-10):
    """Yield equilibria with equal-size supports (non-degenerate games)."""
    m, n = a.shape
    top = min(m, n) if max_support is None else min(m, n, max_support)
    for k in range(1, top + 1):
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.combinations(range(n), k):
                y = _indifference(a[np.ix_(rows, cols)], tol)
                if y is None:
                    continue
                x = _indifference(b[np.ix_(rows, cols)].T, tol)
                if x is None:
                    continue
                xf = np.zeros(m)
                yf = np.zeros(n)
                xf[list(rows)] = x
                yf[list(cols)] = y
                r0, r1 = regrets(a, b, xf, yf)
                if max(r0, r1) <= tol * 10:
                    yield xf, yf


def _indifference(sub, tol):
    """Mixed strategy over columns making every row of ``sub`` equally good."""
    k = sub.shape[0]
    mat = np.zeros((k + 1, k + 1))
    mat[:k, :k] = sub
    mat[:k, k] = -1.0
    mat[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        return None
    p = sol[:k]
    if np.any(p < -tol):
        return None
    return np.clip(p, 0.0, None)
