import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from herd_pricer.beliefs import Action, deterrence_price_curve, posterior_bounds
from herd_pricer.nash import SolverError
from herd_pricer.stage_game import (
    Classification, PriceVector, SolverOptions, StageCache, ThresholdError, decision, decision_cuts,
    deterrence_candidate, find_threshold_mu, payoffs, price_grids, solve_stage, with_grid,
)

from oracles import brute_force_regret

COARSE = SolverOptions(grid_size=21)


def test_decision_examples():
    assert decision(0.8, PriceVector(0.5, 0.1)) is Action.BUY0
    assert decision(0.5, PriceVector(0.6, 0.6)) is Action.EXIT
    assert decision(0.5, PriceVector(0.4, 0.4), mu=0.7) is Action.BUY0
    assert decision(0.5, PriceVector(0.4, 0.4), mu=0.3) is Action.BUY1
    # buying at zero surplus beats the outside option
    assert decision(0.6, PriceVector(0.6, 0.9)) is Action.BUY0


def test_price_vector_domain():
    with pytest.raises(ValueError):
        PriceVector(1.2, 0.0)


def test_cut_examples():
    c = decision_cuts(0.9, PriceVector(0.6, 0.2))
    assert c.full and c.v0 == pytest.approx(0.14 / 0.68, abs=1e-12)
    c = decision_cuts(0.9, PriceVector(0.6, 0.6))
    assert not c.full
    assert c.v0 == pytest.approx(0.06 / 0.42, abs=1e-12)
    assert c.v1 == pytest.approx(0.04 / 0.58, abs=1e-12)
    for t in (0.0, 0.2, 0.5):
        c = decision_cuts(0.5, PriceVector(t, t))
        assert c.full and c.v0 == pytest.approx(0.5, abs=1e-15)


def test_payoff_examples(uniform):
    assert payoffs(0.5, PriceVector(0.4, 0.4), uniform) == pytest.approx((0.2, 0.2), abs=1e-6)
    assert payoffs(0.5, PriceVector(0.0, 0.4), uniform)[0] == 0.0
    h = deterrence_price_curve(0.9, uniform)
    for t1 in (0.0, 0.3, 0.9):
        assert payoffs(0.9, PriceVector(h, t1), uniform)[0] == pytest.approx(h, abs=1e-9)


@given(st.floats(0.02, 0.98), st.floats(0, 1), st.floats(0, 1))
def test_sales_partition(mu, t0, t1):
    from herd_pricer import signals as sig
    s = sig.make_family(sig.Family.UNIFORM, lo=0.3, knots=513)
    p0, p1 = payoffs(mu, PriceVector(t0, t1), s)
    assert p0 <= t0 + 1e-12 and p1 <= t1 + 1e-12
    assert p0 >= 0 and p1 >= 0


def test_price_grids_cover_dominance_bounds(uniform):
    g0, g1 = price_grids(0.9, uniform, 11)
    b = posterior_bounds(0.9, uniform)
    assert g0[0] == pytest.approx(2 * b.lo - 1) and g0[-1] == pytest.approx(b.hi)
    assert g1[0] == 0.0 and g1[-1] == pytest.approx(1 - b.lo)


def test_deterrence_candidate_examples(uniform, tent):
    assert deterrence_candidate(0.95, tent) is None
    assert deterrence_candidate(0.5, uniform) is None
    eq = deterrence_candidate(0.999, uniform)
    assert eq.classification is Classification.DETERRENCE_BY_0
    assert eq.sale_prob0 == pytest.approx(1.0, abs=1e-12) and eq.sale_prob1 < 1e-12
    eq = deterrence_candidate(0.001, uniform)
    assert eq.classification is Classification.DETERRENCE_BY_1


@pytest.mark.parametrize("name", ["UniformBelief", "Tent", "BetaUnbounded"])
def test_symmetric_prior_gives_symmetric_play(families, name):
    eq = solve_stage(0.5, families[name])
    assert eq.classification is Classification.NON_DETERRENCE
    assert np.array_equal(eq.phi0.grid, eq.phi1.grid)
    assert eq.sale_prob0 == pytest.approx(eq.sale_prob1, abs=1e-6)
    assert eq.phi0.mean() == pytest.approx(eq.phi1.mean(), abs=1e-9)


def test_uniform_high_prior_deters(uniform):
    eq = solve_stage(0.99, uniform)
    assert eq.classification is Classification.DETERRENCE_BY_0
    h = deterrence_price_curve(0.99, uniform)
    (price,) = eq.phi0.support()
    assert abs(price - h) <= eq.grid_step / 2
    assert max(brute_force_regret(eq, uniform)) <= 1e-9


@pytest.mark.parametrize("mu", [0.1, 0.5, 0.9])
def test_unbounded_never_deters(beta, mu):
    eq = solve_stage(mu, beta)
    assert eq.classification is Classification.NON_DETERRENCE
    assert max(brute_force_regret(eq, beta)) <= 1e-4


@settings(max_examples=25)
@given(st.floats(0.02, 0.98), st.sampled_from(["UniformBelief", "Tent", "BetaUnbounded"]))
def test_regret_certificate_is_honest(families, mu, name):
    s = families[name]
    eq = solve_stage(mu, s, COARSE)
    brute = brute_force_regret(eq, s)
    assert max(brute) <= COARSE.regret_tol + 1e-12
    assert brute == pytest.approx(eq.regret, abs=1e-9)
    assert eq.sale_prob0 + eq.sale_prob1 + eq.exit_prob == pytest.approx(1.0, abs=1e-9)


def test_solver_failure_carries_best_regret(uniform):
    opts = SolverOptions(grid_size=21, regret_tol=0.0, fp_iters=5, phases=("fictitious_play",))
    with pytest.raises(SolverError) as err:
        solve_stage(0.5, uniform, opts)
    assert np.isfinite(err.value.best_regret) and err.value.best_regret > 0


def test_unknown_phase_rejected(uniform):
    with pytest.raises(ValueError):
        solve_stage(0.5, uniform, SolverOptions(grid_size=5, phases=("magic",)))


def test_prices_approach_one_near_certainty(uniform):
    eq = solve_stage(0.9999, uniform)
    assert eq.phi0.mean() > 0.999
    cuts = decision_cuts(0.9999, PriceVector(eq.phi0.mean(), eq.phi1.mean()))
    assert cuts.v0 <= uniform.support_lo + 1e-9


def test_threshold_stable_across_grids(uniform):
    t201 = find_threshold_mu(uniform, "high")
    t401 = find_threshold_mu(uniform, "high", with_grid(SolverOptions(), 401))
    assert 0.5 < t201.mu_bar < 1.0
    assert abs(t201.mu_bar - t401.mu_bar) <= 2e-3
    assert t201.bracket[1] - t201.bracket[0] <= 1e-3
    low = find_threshold_mu(uniform, "low")
    assert low.mu_bar == pytest.approx(1.0 - t201.mu_bar, abs=2e-3)


def test_threshold_absent_for_vanishing_likelihood(tent, power, beta):
    with pytest.raises(ThresholdError):
        find_threshold_mu(tent, "high")
    with pytest.raises(ThresholdError):
        find_threshold_mu(power, "high")
    with pytest.raises(ThresholdError):
        find_threshold_mu(beta, "high")


def test_coarse_grid_deterrence_artefact_vanishes_on_refinement(tent):
    # a coarse grid cannot see the small profitable raise near certainty
    assert solve_stage(0.997, tent, COARSE).classification is Classification.DETERRENCE_BY_0
    assert solve_stage(0.997, tent).classification is Classification.NON_DETERRENCE


def test_threshold_detects_non_monotone_classification(uniform):
    flip = {0.0: True}

    def solver(m):
        flip[0.0] = not flip[0.0]
        cls = Classification.DETERRENCE_BY_0 if flip[0.0] else Classification.NON_DETERRENCE

        class Eq:
            classification = cls
        return Eq()

    with pytest.raises(ThresholdError, match="non-monotone"):
        find_threshold_mu(uniform, "high", solver=solver)


def test_cache_buckets_and_thread_safety(uniform):
    cache = StageCache(uniform, COARSE, 1e-2)
    assert cache.bucket(0.5049) == 50 and cache.bucket(0.505) == 51
    assert cache.bucket(0.0) == 1 and cache.bucket(1.0) == 99
    got = []
    threads = [threading.Thread(target=lambda: got.append(cache.get(37))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(cache) == 1 and all(g is got[0] for g in got)
    assert got[0].mu == pytest.approx(0.37)
