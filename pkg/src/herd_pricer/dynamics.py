"""Repeated arrivals under myopic stage-equilibrium pricing.

Every period the firms play the (memoised) stage equilibrium at the current
public belief, one consumer draws a private belief and acts, and the public
belief is updated from the action.  A run stops when the belief gets within
``eps`` of a vertex, when a deterrence profile freezes it, or at ``T_max``.
"""
from __future__ import annotations

import enum
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from ._backend import USE_NUMBA
from .beliefs import update_after_action
from .nash import SolverError
from .signals import SignalStructure
from .stage_game import Classification, SolverOptions, StageCache

EPS_LEARN = 1e-3
T_MAX = 10_000
FREEZE_PROBE = 10
MAX_ERROR_RATE = 1e-3


class Outcome(str, enum.Enum):
    LEARNED_CORRECT = "LearnedCorrect"
    LEARNED_WRONG = "LearnedWrong"
    HERD_ON_FIRM0 = "HerdOnFirm0"
    HERD_ON_FIRM1 = "HerdOnFirm1"
    UNDECIDED = "Undecided"
    FAILED = "Failed"

    @property
    def herd_firm(self):
        if self is Outcome.HERD_ON_FIRM0:
            return 0
        if self is Outcome.HERD_ON_FIRM1:
            return 1
        return None


class DynamicsError(RuntimeError):
    pass


_STATUS_NAMES = {
    K.LEARNED_LOW: "learned",
    K.LEARNED_HIGH: "learned",
    K.HERD: "herd",
    K.HORIZON: "horizon",
    K.FREEZE_BROKEN: "freeze_broken",
    K.ZERO_PROB: "zero_probability_action",
    K.SOLVER_FAILED: "solver_failed",
}


@dataclass
class TrajectoryRecord:
    """One simulated history.

    ``mu`` has one more entry than the per-period arrays: ``mu[t]`` is the
    belief at which period ``t`` was played and ``mu[-1]`` the terminal one.
    Batches may drop the price, action and cut arrays (left as ``None``) for
    runs whose detail is not needed; belief path and purchase probabilities
    are always kept.
    """

    run: int
    state: int
    mu: np.ndarray
    tau0: np.ndarray | None
    tau1: np.ndarray | None
    action: np.ndarray | None
    v0: np.ndarray | None
    v1: np.ndarray | None
    correct: np.ndarray
    status: str
    onset: int | None = None
    outcome: Outcome = Outcome.UNDECIDED
    error: str | None = None
    hitting_time: int | None = None

    def __post_init__(self):
        if self.action is not None and self.hitting_time is None:
            self.hitting_time = first_settled(self.action, self.state)

    @property
    def length(self) -> int:
        return len(self.mu) - 1

    @property
    def detailed(self) -> bool:
        return self.action is not None

    @property
    def terminal_mu(self) -> float:
        return float(self.mu[-1])

    @property
    def herd_firm(self):
        return self.outcome.herd_firm

    def steps(self):
        for t in range(self.length):
            yield (t, float(self.mu[t]), (float(self.tau0[t]), float(self.tau1[t])),
                   int(self.action[t]), (float(self.v0[t]), float(self.v1[t])))

    def strip(self):
        """Drop the per-period detail arrays."""
        self.tau0 = self.tau1 = self.action = self.v0 = self.v1 = None
        return self


def first_settled(action, state):
    """First period after which every recorded action buys product ``state``."""
    n = len(action)
    if n == 0:
        return None
    wrong = np.flatnonzero(np.asarray(action) != state)
    if wrong.size == 0:
        return 0
    t = int(wrong[-1]) + 1
    return t if t < n else None


def classify_outcome(tr: TrajectoryRecord, eps: float = EPS_LEARN) -> Outcome:
    if tr.status in ("freeze_broken", "zero_probability_action", "solver_failed"):
        return Outcome.FAILED
    mu = tr.terminal_mu
    good, bad = (mu >= 1.0 - eps, mu <= eps) if tr.state == 0 else (mu <= eps, mu >= 1.0 - eps)
    if good:
        return Outcome.LEARNED_CORRECT
    if bad:
        return Outcome.LEARNED_WRONG
    if tr.onset is not None:
        if tr.action is not None and tr.length > tr.onset:
            firm = int(tr.action[tr.onset])
        else:
            firm = 0 if mu >= 0.5 else 1
        return Outcome.HERD_ON_FIRM0 if firm == 0 else Outcome.HERD_ON_FIRM1
    return Outcome.UNDECIDED


# -- memo table in kernel-friendly layout ---------------------------------------

class BucketTable:
    """Stage equilibria per prior bucket stored as flat arrays.

    ``kind`` is 0 for a generic profile, 1 or 2 for deterrence by firm 0 or
    1, and -1 for a bucket whose solve failed.  ``c0``/``c1`` hold cumulative
    weights over grid *indices*: a price is drawn as an index and read off
    the grid built at the exact current belief.  Grids move with the belief
    (their end points are the posterior bounds), so this keeps each firm at
    the same position relative to, say, its rival's deterrence price across
    the whole bucket instead of freezing absolute prices at the centre.
    """

    def __init__(self, cache: StageCache):
        self.cache = cache
        nb = cache.nbuckets
        n = cache.opts.grid_size
        self.resolution = cache.resolution
        self.solved = np.zeros(nb, dtype=np.bool_)
        self.kind = np.zeros(nb, dtype=np.int64)
        self.c0 = np.ones((nb, n))
        self.c1 = np.ones((nb, n))
        self.errors: dict[int, str] = {}
        self._lock = threading.Lock()

    def ensure(self, ks):
        for k in np.atleast_1d(ks):
            k = int(k)
            if not self.solved[k]:
                self._fill(k)

    def _fill(self, k: int):
        try:
            eq = self.cache.get(k)
        except SolverError as exc:
            with self._lock:
                self.errors[k] = f"bucket mu={self.cache.centre(k):.6f}: {exc}"
                self.kind[k] = -1
                self.solved[k] = True
            return
        with self._lock:
            if self.solved[k]:
                return
            if eq.classification is Classification.DETERRENCE_BY_0:
                self.kind[k] = K.KIND_DETER0
            elif eq.classification is Classification.DETERRENCE_BY_1:
                self.kind[k] = K.KIND_DETER1
            else:
                self.kind[k] = K.KIND_MIXED
            self.c0[k] = _cumulative(eq.phi0.weights)
            self.c1[k] = _cumulative(eq.phi1.weights)
            # published last so readers never see a half-written row
            self.solved[k] = True

    def expected_correct(self, mu: float, state: int) -> float:
        """Probability the consumer buys product ``state`` at belief ``mu``."""
        k = K.bucket_of(mu, self.resolution, self.solved.shape[0])
        self.ensure(k)
        kind = self.kind[k]
        if kind == K.KIND_DETER0:
            return 1.0 if state == 0 else 0.0
        if kind == K.KIND_DETER1:
            return 1.0 if state == 1 else 0.0
        if kind < 0:
            return float("nan")
        s = self.cache.s
        lo, dx, tab0, tab1 = s.tables
        w0 = np.diff(self.c0[k], prepend=0.0)
        w1 = np.diff(self.c1[k], prepend=0.0)
        n = w0.shape[0]
        s0, e0, s1, e1 = K.grid_bounds(mu, lo, s.support_hi)
        total = 0.0
        for i in np.flatnonzero(w0 > 0):
            for j in np.flatnonzero(w1 > 0):
                tau0 = K.grid_point(i, n, s0, e0)
                tau1 = K.grid_point(j, n, s1, e1)
                full, v0, v1 = K.decision_cuts(mu, tau0, tau1)
                total += w0[i] * w1[j] * K.correct_prob(state, full, v0, v1, lo, dx, tab0, tab1)
        return float(total)


def _cumulative(w):
    c = np.cumsum(np.clip(w, 0.0, None))
    c /= c[-1]
    c[-1] = 1.0
    return c


# -- random streams ---------------------------------------------------------------

def run_streams(seed: int, runs: int):
    """Independent generators, one per run index, derived from ``seed``."""
    return [np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(runs)]


def draw_run(rng, mu0: float, T_max: int, state=None):
    """State then a (T_max, 3) block of uniforms: firm 0 price, firm 1 price, signal.

    The state draw is always consumed so a fixed ``state`` does not shift the
    rest of the stream.
    """
    omega = 0 if rng.random() < mu0 else 1
    if state is not None:
        omega = int(state)
    return omega, rng.random((T_max, 3))


# -- simulation --------------------------------------------------------------------

@dataclass(frozen=True)
class DynamicsConfig:
    mu0: float = 0.5
    T_max: int = T_MAX
    eps: float = EPS_LEARN
    state: int | None = None
    probe: int = FREEZE_PROBE
    resolution: float = 1e-3
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not 0.0 < self.mu0 < 1.0:
            raise ValueError(f"mu0 must lie in (0, 1), got {self.mu0}")
        if self.T_max < 1:
            raise ValueError("T_max must be positive")
        if not 0.0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")
        if self.state not in (None, 0, 1):
            raise ValueError("state must be 0, 1 or None (drawn from mu0)")
        if self.probe < 0:
            raise ValueError("probe must be non-negative")


def make_table(s: SignalStructure, cfg: DynamicsConfig) -> BucketTable:
    return BucketTable(StageCache(s, cfg.solver, cfg.resolution))


def _record(run, omega, mu_final, onset, status, length, bufs, eps, error=None, detail=True):
    o_mu, o_tau0, o_tau1, o_act, o_v0, o_v1, o_corr = bufs
    mu = np.empty(length + 1)
    mu[:length] = o_mu[:length]
    mu[length] = mu_final
    tr = TrajectoryRecord(
        run=run,
        state=int(omega),
        mu=mu,
        tau0=o_tau0[:length].copy(),
        tau1=o_tau1[:length].copy(),
        action=o_act[:length].copy(),
        v0=o_v0[:length].copy(),
        v1=o_v1[:length].copy(),
        correct=o_corr[:length].copy(),
        status=_STATUS_NAMES[int(status)],
        onset=None if onset < 0 else int(onset),
        error=error,
    )
    tr.outcome = classify_outcome(tr, eps)
    return tr if detail else tr.strip()


def _buffers(shape):
    return (np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=np.int64),
            np.zeros(shape), np.zeros(shape), np.zeros(shape))


def _simulate_numba(run, omega, uni, s, cfg, table, detail=True):
    lo, dx, tab0, tab1 = s.tables
    hi = s.support_hi
    bufs = _buffers(cfg.T_max)
    t, mu, onset = 0, float(cfg.mu0), -1
    while True:
        t, mu, onset, status, k = K.trajectory_steps(
            t, mu, onset, omega, uni, lo, hi, dx, tab0, tab1, cfg.eps, cfg.probe,
            table.resolution, table.solved, table.kind, table.c0, table.c1,
            *bufs,
        )
        if status != K.NEED_BUCKET:
            break
        table.ensure(k)
    length = t
    if status == K.ZERO_PROB:
        length = t + 1
    error = table.errors.get(k) if status == K.SOLVER_FAILED else None
    return _record(run, omega, mu, onset, status, length, bufs, cfg.eps, error, detail)


def _simulate_numpy(runs_idx, omegas, unis, s, cfg, table, detail=None):
    lo, dx, tab0, tab1 = s.tables
    hi = s.support_hi
    r = len(runs_idx)
    bufs = _buffers((r, cfg.T_max))
    mu0 = np.full(r, float(cfg.mu0))
    mu, onset, status, length = K.trajectory_batch_numpy(
        mu0, np.asarray(omegas), unis, lo, hi, dx, tab0, tab1, cfg.eps, cfg.probe,
        table.resolution, table, bufs,
    )
    out = []
    for i, run in enumerate(runs_idx):
        row = tuple(b[i] for b in bufs)
        length_i = int(length[i]) + (1 if status[i] == K.ZERO_PROB else 0)
        err = None
        if status[i] == K.SOLVER_FAILED:
            k = K.bucket_of(float(mu[i]), table.resolution, table.solved.shape[0])
            err = table.errors.get(k)
        keep = True if detail is None else detail(run)
        out.append(_record(run, omegas[i], float(mu[i]), int(onset[i]), int(status[i]), length_i, row, cfg.eps,
                           err, keep))
    return out


def simulate(s: SignalStructure, cfg: DynamicsConfig = DynamicsConfig(), seed: int = 0,
             run: int = 0, table: BucketTable | None = None) -> TrajectoryRecord:
    """Simulate run ``run`` of the batch seeded by ``seed``.

    Raises ``SolverError`` if a stage solve fails along the way.
    """
    table = table or make_table(s, cfg)
    rng = run_streams(seed, run + 1)[run]
    omega, uni = draw_run(rng, cfg.mu0, cfg.T_max, cfg.state)
    if USE_NUMBA:
        tr = _simulate_numba(run, omega, uni, s, cfg, table)
    else:
        tr = _simulate_numpy([run], [omega], uni[None], s, cfg, table)[0]
    if tr.status == "solver_failed":
        raise SolverError(tr.error or "stage solve failed")
    return tr


def simulate_batch(s: SignalStructure, cfg: DynamicsConfig, runs: int, seed: int = 0,
                   table: BucketTable | None = None, workers: int = 1, chunk: int = 64,
                   detail_runs: int = -1):
    """All ``runs`` trajectories of a seeded batch, ordered by run index.

    Only the first ``detail_runs`` records keep their price, action and cut
    arrays (all of them when negative).
    """
    if runs < 1:
        raise ValueError("run count must be at least 1")
    table = table or make_table(s, cfg)
    streams = run_streams(seed, runs)
    blocks = [list(range(i, min(i + chunk, runs))) for i in range(0, runs, chunk)]

    def detail(i):
        return detail_runs < 0 or i < detail_runs

    def one_block(idx):
        drawn = [draw_run(streams[i], cfg.mu0, cfg.T_max, cfg.state) for i in idx]
        if USE_NUMBA:
            return [_simulate_numba(i, om, uni, s, cfg, table, detail(i)) for i, (om, uni) in zip(idx, drawn)]
        omegas = [om for om, _ in drawn]
        unis = np.stack([u for _, u in drawn])
        return _simulate_numpy(idx, omegas, unis, s, cfg, table, detail)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(one_block, blocks))
    else:
        parts = [one_block(b) for b in blocks]
    return [tr for part in parts for tr in part]


# -- statistics ------------------------------------------------------------------

@dataclass
class MartingaleReport:
    rows: list
    skipped: list
    z: float

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "z": self.z, "buckets": self.rows, "skipped": self.skipped}


def transitions(records):
    mus = [tr.mu for tr in records if len(tr.mu) > 1]
    if not mus:
        return np.empty(0), np.empty(0)
    before = np.concatenate([m[:-1] for m in mus])
    after = np.concatenate([m[1:] for m in mus])
    return before, after


def martingale_test(records=None, buckets: int = 20, min_count: int = 100, z: float = 3.0,
                    before=None, after=None) -> MartingaleReport:
    """Per-bucket test that the mean belief change is zero.

    Transitions are grouped by the starting belief into ``buckets`` equal
    bins of [0, 1]; a bucket passes when its mean change is within ``z``
    standard errors of zero (a bucket with no movement at all passes).
    """
    if before is None:
        before, after = transitions(records)
    before = np.asarray(before, dtype=float)
    delta = np.asarray(after, dtype=float) - before
    idx = np.minimum((before * buckets).astype(np.int64), buckets - 1)
    rows, skipped = [], []
    for b in range(buckets):
        d = delta[idx == b]
        lo, hi = b / buckets, (b + 1) / buckets
        if d.size < min_count:
            if d.size:
                skipped.append({"lo": lo, "hi": hi, "count": int(d.size)})
            continue
        mean = float(d.mean())
        se = float(d.std(ddof=1) / np.sqrt(d.size))
        ok = bool(mean == 0.0 or abs(mean) < z * se)
        rows.append({"lo": lo, "hi": hi, "count": int(d.size), "mean_change": mean,
                     "std_error": se, "passed": ok})
    return MartingaleReport(rows, skipped, z)


def purchase_correctness(records, T_max: int, table: BucketTable):
    """Per-period probability that the arriving consumer buys the better product.

    Each run contributes its exact conditional purchase probability while it
    is live; after it stops the value is held at what the frozen or learned
    belief implies (1 or 0 for a herd, the stage value at the terminal
    belief for a learned run, the last value for anything else).
    """
    sums = np.zeros((2, T_max))
    tail = np.zeros((2, T_max + 1))
    counts = np.zeros(2)
    for tr in records:
        if tr.outcome is Outcome.FAILED:
            continue
        w = tr.state
        n = tr.length
        counts[w] += 1
        sums[w, :n] += tr.correct
        if n >= T_max:
            continue
        if tr.outcome.herd_firm is not None:
            after = 1.0 if tr.outcome.herd_firm == w else 0.0
        elif tr.outcome in (Outcome.LEARNED_CORRECT, Outcome.LEARNED_WRONG):
            after = table.expected_correct(tr.terminal_mu, w)
        else:
            after = float(tr.correct[-1]) if n else 0.0
        tail[w, n] += after
    sums += np.cumsum(tail, axis=1)[:, :T_max]
    with np.errstate(invalid="ignore"):
        return {w: sums[w] / counts[w] if counts[w] else np.full(T_max, np.nan) for w in (0, 1)}


def movement_fraction(records, eta: float = 1e-3, eps: float = EPS_LEARN) -> float:
    """Share of interior transitions that move the belief by more than ``eta``."""
    before, after = transitions(records)
    inside = (before > eps) & (before < 1.0 - eps)
    if not inside.any():
        return float("nan")
    return float(np.mean(np.abs(after[inside] - before[inside]) > eta))


@dataclass
class MonteCarloSummary:
    runs: int
    errors: int
    by_state: dict
    outcome_counts: dict
    learned_correct: float
    learned_wrong: int
    herd: float
    herd_inferior: float
    deterrence_terminations: int
    frozen_after_onset: bool
    hitting_time: dict
    correctness_final: dict
    movement_fraction: float
    martingale: MartingaleReport
    error_messages: list = field(default_factory=list)
    learned_wrong_bound: float = 0.0
    learned_wrong_pvalue: float = 1.0

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "errors": self.errors,
            "outcome_counts": self.outcome_counts,
            "by_state": self.by_state,
            "learned_correct_frequency": self.learned_correct,
            "learned_wrong_count": self.learned_wrong,
            "learned_wrong_bound": self.learned_wrong_bound,
            "learned_wrong_pvalue": self.learned_wrong_pvalue,
            "herd_frequency": self.herd,
            "herd_inferior_frequency": self.herd_inferior,
            "deterrence_terminations": self.deterrence_terminations,
            "frozen_after_onset": self.frozen_after_onset,
            "hitting_time": self.hitting_time,
            "purchase_correctness_final": self.correctness_final,
            "movement_fraction": self.movement_fraction,
            "martingale": self.martingale.to_dict(),
            "error_messages": self.error_messages,
        }


def wrong_vertex_bound(mu0: float, state: int, eps: float = EPS_LEARN) -> float:
    """Upper bound on the chance a run ever comes within ``eps`` of the wrong vertex.

    Conditional on the state, the likelihood ratio of the other state is a
    non-negative martingale, so by the maximal inequality it exceeds
    (1 - eps) / eps with probability at most its start value divided by that.
    """
    start = (1.0 - mu0) / mu0 if state == 0 else mu0 / (1.0 - mu0)
    return min(1.0, start * eps / (1.0 - eps))


def wrong_vertex_test(records, eps: float = EPS_LEARN):
    """(expected-count bound, one-sided p-value) for the LearnedWrong count.

    Reaching the wrong vertex within ``eps`` is a legitimate finite-sample
    event; only a count far above the martingale bound points to a bug.
    """
    live = [tr for tr in records if tr.outcome is not Outcome.FAILED and len(tr.mu)]
    if not live:
        return 0.0, 1.0
    bound = sum(wrong_vertex_bound(float(tr.mu[0]), tr.state, eps) for tr in live)
    count = sum(1 for tr in live if tr.outcome is Outcome.LEARNED_WRONG)
    if count == 0:
        return float(bound), 1.0
    p = float(stats.binom.sf(count - 1, len(live), min(1.0, bound / len(live))))
    return float(bound), p


def summarize(records, T_max: int, table: BucketTable, eps: float = EPS_LEARN,
              martingale_buckets: int = 20, min_count: int = 100):
    n = len(records)
    outcomes = [tr.outcome for tr in records]
    failed = [tr for tr in records if tr.outcome is Outcome.FAILED]
    counts = {o.value: sum(1 for x in outcomes if x is o) for o in Outcome}
    by_state = {}
    for w in (0, 1):
        sub = [tr for tr in records if tr.state == w and tr.outcome is not Outcome.FAILED]
        m = len(sub)
        freq = {o.value: (sum(1 for tr in sub if tr.outcome is o) / m if m else 0.0)
                for o in Outcome if o is not Outcome.FAILED}
        inferior = sum(1 for tr in sub if tr.outcome.herd_firm is not None and tr.outcome.herd_firm != w)
        freq["herd_inferior"] = inferior / m if m else 0.0
        by_state[str(w)] = {"runs": m, **freq}
    herds = [tr for tr in records if tr.outcome.herd_firm is not None]
    frozen = all(np.all(tr.mu[tr.onset:] == tr.mu[tr.onset]) for tr in herds)
    hits = [tr.hitting_time for tr in records if tr.outcome is Outcome.LEARNED_CORRECT]
    hits = np.array([h for h in hits if h is not None], dtype=float)
    if hits.size:
        q = np.quantile(hits, [0.1, 0.5, 0.9])
        hitting = {"count": int(hits.size), "mean": float(hits.mean()),
                   "q10": float(q[0]), "median": float(q[1]), "q90": float(q[2])}
    else:
        hitting = {"count": 0}
    corr = purchase_correctness(records, T_max, table)
    good = max(n - len(failed), 1)
    wrong_bound, wrong_p = wrong_vertex_test(records, eps)
    return MonteCarloSummary(
        runs=n,
        errors=len(failed),
        by_state=by_state,
        outcome_counts=counts,
        learned_correct=counts[Outcome.LEARNED_CORRECT.value] / good,
        learned_wrong=counts[Outcome.LEARNED_WRONG.value],
        herd=len(herds) / good,
        herd_inferior=sum(1 for tr in herds if tr.outcome.herd_firm != tr.state) / good,
        deterrence_terminations=len(herds),
        frozen_after_onset=bool(frozen),
        hitting_time=hitting,
        correctness_final={str(w): float(corr[w][-1]) for w in (0, 1)},
        movement_fraction=movement_fraction(records, eps=eps),
        martingale=martingale_test(records, martingale_buckets, min_count),
        error_messages=sorted({tr.error or tr.status for tr in failed}),
        learned_wrong_bound=wrong_bound,
        learned_wrong_pvalue=wrong_p,
    )


def monte_carlo(s: SignalStructure, cfg: DynamicsConfig, runs: int, seed: int = 0,
                workers: int = 1, table: BucketTable | None = None, detail_runs: int = -1):
    """Seeded batch plus its summary; fails if more than 0.1% of runs error."""
    table = table or make_table(s, cfg)
    records = simulate_batch(s, cfg, runs, seed, table=table, workers=workers, detail_runs=detail_runs)
    summary = summarize(records, cfg.T_max, table, cfg.eps)
    if summary.errors > MAX_ERROR_RATE * runs:
        raise DynamicsError(
            f"{summary.errors} of {runs} runs failed: " + "; ".join(summary.error_messages[:5])
        )
    return summary, records


def replay(tr: TrajectoryRecord, s: SignalStructure) -> np.ndarray:
    """Recompute the belief path from the recorded prices, cuts and actions."""
    if not tr.detailed:
        raise ValueError(f"run {tr.run} was stored without its per-period detail")
    out = np.empty(tr.length + 1)
    mu = float(tr.mu[0]) if tr.length else tr.terminal_mu
    out[0] = mu
    for t in range(tr.length):
        full = tr.tau0[t] + tr.tau1[t] <= 1.0
        mu = update_after_action(mu, (full, tr.v0[t], tr.v1[t]), int(tr.action[t]), s)
        out[t + 1] = mu
    return out
