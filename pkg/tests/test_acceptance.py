"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured value,
the tolerance it is held to and the elapsed time, then asserts.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from altgd.diagnostics import (
    chaos_extreme_points,
    cumulative_utility,
    energy_posneg,
    energy_pospos,
    geometric_horizons,
    regret_report,
    round_robin_regret,
    time_average_convergence,
    volume_jacobian_check,
)
from altgd.dynamics import Budget, JointState, LearningRates, run, run_against_opponent
from altgd.experiments import ExperimentConfig, confidence_interval, rate_sweep, t_quantile
from altgd.game import learning_rate_threshold, make_network_game, reduce_to_meta, spectral_norm
from altgd.gamegen import GeneratorConfig, canonical, dummy_agent_extension, \
    lemma_bounds_construction, random_instance, random_zero_sum_network

import oracles


@pytest.fixture
def report(capsys):
    start = time.perf_counter()

    def emit(label, ok, detail):
        elapsed = time.perf_counter() - start
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{label}] {detail} ({elapsed:.1f} s)")
        return ok

    return emit


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# -- 1. exact identities ----------------------------------------------------------------


def _identity_corpus(count=100, T=200):
    """Half real alternating runs, half runs against arbitrary opponent sequences."""
    r = np.random.default_rng(2024)
    out = []
    for i in range(count):
        m, n = r.integers(1, 7, size=2)
        A = r.uniform(-1, 1, size=(m, n))
        eta = r.uniform(0.05, 1.0, m)
        x0 = r.uniform(-1, 1, m)
        if i % 2 == 0:
            gamma = r.uniform(0.05, 1.0, n)
            game = make_network_game({(0, 1): A, (1, 0): -A.T}, (m, n))
            tr = run(game, "2altgd", JointState((x0,), (r.uniform(-1, 1, n),)),
                     LearningRates((eta,), (gamma,)), Budget.iterations(T))
        else:
            ys = r.uniform(-3, 3, size=(T + 1, n)) * r.uniform(0.1, 10)
            tr = run_against_opponent(A, x0, eta, ys)
        out.append((tr, r.uniform(-2, 2, m)))
    return out


def test_criterion_1_regret_and_utility_identities(report):
    corpus = _identity_corpus()
    worst_regret = worst_util = 0.0
    for tr, x in corpus:
        rep = regret_report(tr, 0, x)
        worst_regret = max(worst_regret, _rel(rep.simulated_total, rep.closed_form_total))
        u = cumulative_utility(tr)
        worst_util = max(worst_util, _rel(u.simulated, u.closed_form))
    ok = worst_regret <= 1e-8 and worst_util <= 1e-8
    report("1 regret/utility", ok,
           f"100 trajectories T=200: max rel err regret {worst_regret:.2e}, "
           f"utility {worst_util:.2e} (tol 1e-8)")
    assert ok


def test_criterion_1_volume_preservation(report):
    r = np.random.default_rng(7)
    worst = 0.0
    for i in range(50):
        n, k = int(r.integers(2, 6)), int(r.integers(1, 6))
        game = random_zero_sum_network(GeneratorConfig(n, k, 500 + i))
        d = n * k
        dets = volume_jacobian_check(reduce_to_meta(game), r.uniform(0.01, 2, d),
                                     r.uniform(0.01, 2, d))
        worst = max(worst, *(abs(v - 1.0) for v in dets))
    ok = worst <= 1e-10
    report("1 volume", ok, f"50 meta-games: max |det - 1| = {worst:.2e} (tol 1e-10)")
    assert ok


# -- 2. exact trajectories --------------------------------------------------------------------


def _divergence_run(T):
    inst = canonical("divergence_instance")
    return run(inst.game, "2altgd", inst.init, inst.rates, Budget.iterations(T),
               guard=math.inf)


def test_criterion_2_linear_divergence(report):
    tr = _divergence_run(10_000)
    bad = [t for t in range(10_001) if tr.xs[t, 0] != (-1) ** t * 4 * t]
    ok = not bad
    report("2 unbounded", ok, f"x^t == (-1)^t 4t exactly for t <= 10^4: {len(bad)} mismatches")
    assert ok


def test_criterion_2_non_convergence_even(report):
    tr = _divergence_run(2001)
    x = [int(v) for v in tr.xs[:, 0]]
    # sum_{t=0}^{2T} x^t / (2T), exact rationals
    bad = [T for T in range(1, 1000) if Fraction(sum(x[: 2 * T + 1]), 2 * T) != 2]
    ok = not bad
    report("2 noconverge even", ok, f"even time-average == 2 exactly for T < 1000: "
                                    f"{len(bad)} mismatches")
    assert ok


@pytest.mark.xfail(strict=True, reason="stated odd-step value is off by 4/(2T+1); see notes")
def test_criterion_2_non_convergence_odd(report):
    tr = _divergence_run(2001)
    x = [int(v) for v in tr.xs[:, 0]]
    worst, example = 0.0, None
    for T in range(1, 1000):
        got = Fraction(sum(x[: 2 * T + 2]), 2 * T + 1)
        err = abs(float(got - Fraction(-4 * T, 2 * T + 1)))
        if err > worst:
            worst, example = err, (T, got)
    ok = worst <= 1e-12
    T, got = example
    report("2 noconverge odd", ok,
           f"odd time-average vs -4T/(2T+1): max err {worst:.3g} (tol 1e-12); "
           f"e.g. T={T} gives {got} = -4(T+1)/(2T+1)")
    assert ok


def test_criterion_2_round_robin(report):
    inst = canonical("round_robin_cycle")
    tr = run(inst.game, "roundgd", inst.init, inst.rates, Budget.iterations(600))
    period = next(p for p in range(1, 601) if np.array_equal(tr.xs[p], tr.xs[0]))
    periodic = all(np.array_equal(tr.xs[t], tr.xs[t % 6]) for t in range(601))
    ms = list(range(1, 11)) + [25, 50, 75, 100]
    wrong = []
    for k in range(6):
        g = dummy_agent_extension(inst.game, k)
        init = JointState(tuple(inst.init.x) + tuple(np.zeros(1) for _ in range(k)))
        rates = LearningRates.uniform(g.dims, 1.0)
        for m in ms:
            if round_robin_regret(g, init, rates, 6 * m).regret != 6 * k * m:
                wrong.append((k, m))
    ok = period == 6 and periodic and not wrong
    report("2 round robin", ok, f"period {period}; regret == 6km for k<=5, m in {ms}: "
                                f"{len(wrong)} mismatches")
    assert ok


def test_criterion_2_chaos(report):
    bad = []
    for t in range(23):
        geo = chaos_extreme_points(t)
        hull = oracles.chaos_corners(t)
        if geo.area != 4 or sorted(geo.vertices) != sorted(hull) \
                or oracles.shoelace_twice(hull) != 8:
            bad.append(t)
    ok = not bad
    report("2 chaos", ok, f"area 4 and Fibonacci corners for t <= 22: {len(bad)} mismatches")
    assert ok


# -- 3. energy ------------------------------------------------------------------------------


def _definite_network(r, sign):
    """Random network game with diagonal transforms; sign -1 pos-neg, +1 pos-pos."""
    n = int(r.integers(2, 6))
    dims = [int(d) for d in r.integers(1, 7, size=n)]
    P = [np.diag(r.uniform(0.5, 2.0, d)) for d in dims]
    blocks = {}
    for i in range(n):
        for j in range(i + 1, n):
            C = r.uniform(-1, 1, size=(dims[i], dims[j]))
            blocks[(i, j)] = P[i] @ C
            blocks[(j, i)] = P[j] @ (sign * C.T)
    game = make_network_game(blocks, dims, transforms=P)
    x0 = JointState(tuple(r.uniform(-1, 1, d) for d in dims))
    return game, x0, P


def _uniform_rates_for(game, P, product):
    # with eta = gamma = c / max(p) the rate product is exactly c
    pmax = max(float(np.max(np.diag(p))) for p in P)
    return LearningRates.uniform(game.dims, product / pmax)


def test_criterion_3_energy_pos_neg(report):
    r = np.random.default_rng(33)
    worst = 0.0
    for _ in range(20):
        game, x0, P = _definite_network(r, -1.0)
        thr = learning_rate_threshold(reduce_to_meta(game)).spectral
        rates = _uniform_rates_for(game, P, 0.9 * thr)
        tr = run(game, "altgd", x0, rates, Budget.iterations(100_000))
        rep = energy_posneg(tr)
        assert rep.commuting
        worst = max(worst, rep.max_relative_drift)
    ok = worst < 1e-9
    report("3 energy pos-neg", ok, f"20 games, 10^5 iterations at 0.9x threshold: "
                                   f"max relative drift {worst:.2e} (tol 1e-9)")
    assert ok


def test_criterion_3_energy_pos_pos(report):
    # Generic duplicate starts: with y0 = x0 and equal rates the two quadratic
    # terms cancel, leaving |E0| tiny and the relative drift ill-conditioned.
    r = np.random.default_rng(34)
    worst, worst_tied, biggest = 0.0, 0.0, 0.0
    for _ in range(20):
        game, x0, P = _definite_network(r, 1.0)
        norm = learning_rate_threshold(reduce_to_meta(game)).norm
        rates = _uniform_rates_for(game, P, 0.005 / norm)
        tied = energy_pospos(run(game, "altgd", x0, rates, Budget.iterations(1000)))
        worst_tied = max(worst_tied, tied.max_relative_drift)
        init = JointState(x0.x, tuple(r.uniform(-1, 1, d) for d in game.dims))
        tr = run(game, "altgd", init, rates, Budget.iterations(1000))
        worst = max(worst, energy_pospos(tr).max_relative_drift)
        biggest = max(biggest, float(np.max(np.abs(tr.xs))))
    ok = worst < 1e-9 and biggest < 1e100
    report("3 energy pos-pos", ok, f"20 games, 10^3 iterations, independent duplicate starts: "
                                   f"max relative drift {worst:.2e} (tol 1e-9), max |x| "
                                   f"{biggest:.3g}; with y0 = x0 the drift is {worst_tied:.2e}")
    assert ok


# -- 4. convergence rate -----------------------------------------------------------------------


def test_criterion_4_convergence_rate(report):
    hs = geometric_horizons(16, 2 ** 17)
    eta = 0.95 * 2 / (5 * 4)
    slopes, violations = [], 0
    for i in range(20):
        game, x0 = random_instance(GeneratorConfig(5, 5, 40_000 + i))
        tr = run(game, "altgd", x0, LearningRates.uniform(game.dims, eta),
                 Budget.iterations(2 ** 17), record_every=None, horizons=hs)
        rep = time_average_convergence(tr)
        slopes.append(rep.slope)
        violations += sum(not w for w in rep.within_bound)
    ok = all(-1.15 <= s <= -0.85 for s in slopes) and violations == 0
    report("4 convergence", ok, f"20 games: slopes in [{min(slopes):.3f}, {max(slopes):.3f}] "
                                f"(need [-1.15, -0.85]); c/T violations {violations}")
    assert ok


# -- 5. spectral bounds ---------------------------------------------------------------------------


def test_criterion_5_spectral_bounds(report):
    worst_ratio, count = 0.0, 0
    for n in (5, 10):
        for k in (5, 10):
            for i in range(100):
                game = random_zero_sum_network(GeneratorConfig(n, k, 900_000 + 1000 * n + 10 * k + i))
                worst_ratio = max(worst_ratio, spectral_norm(reduce_to_meta(game).a_bar) / (k * (n - 1)))
                count += 1
    gaps = []
    for n in (5, 10):
        for k in (5, 10):
            norm = spectral_norm(reduce_to_meta(lemma_bounds_construction(n, k)).a_bar)
            gaps.append(norm - k / math.sqrt(3) * (n - 1))
    ok = worst_ratio <= 1.0 and min(gaps) >= -1e-6
    report("5 spectral", ok, f"{count} random games: max ||A||/(k(N-1)) = {worst_ratio:.3f} "
                             f"(need <= 1); construction margin over (k/sqrt3)(N-1) "
                             f">= {min(gaps):.3f} (tol -1e-6)")
    assert ok


# -- 6. experiment protocol ------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_paired_experiment(report):
    cfg = ExperimentConfig(agents=(5,), strategies=(5,), games_per_cell=30, budget=100_000,
                           multipliers=(1.0, 2.0, 4.0), alt_multiplier=4.0)
    sweep = rate_sweep(cfg)
    top = sweep.results[4.0]
    wins = top.alt_wins("opt")
    mean4 = float(np.mean(top.ratios("opt")))
    mean1 = float(np.mean(sweep.results[1.0].ratios("opt")))
    ok = wins >= 27 and mean4 > 1.5 and mean1 < 1.0 < mean4
    report("6 experiment", ok, f"AltGD(4x) beats OptGD in {wins}/30 (need >= 27); mean ratio "
                               f"{mean4:.3f} (need > 1.5); sweep mean at 1x {mean1:.3f} < 1 < "
                               f"{mean4:.3f} at 4x")
    assert ok


# -- 7. statistics ---------------------------------------------------------------------------------


def test_criterion_7_t_intervals(report):
    checks = [
        (confidence_interval([1.0, 2.0, 3.0]), (-0.484, 4.484)),
        (confidence_interval([2, 4, 4, 4, 5, 5, 7, 9]), (3.2125, 6.7875)),
        (confidence_interval([3.0] * 5), (3.0, 3.0)),
        ((t_quantile(0.975, 9), t_quantile(0.975, 2)), (2.262157, 4.302653)),
    ]
    worst = max(abs(a - b) for got, want in checks for a, b in zip(got, want))
    ok = worst <= 1e-3
    report("7 statistics", ok, f"hand-computed intervals and quantiles: max err {worst:.2e} "
                               f"(tol 1e-3)")
    assert ok
