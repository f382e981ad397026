import csv
import io

import numpy as np
import pytest

from altgd.dynamics import (
    Budget,
    JointState,
    LearningRates,
    ProductCounter,
    initial_cache,
    run,
    run_against_opponent,
    step_2alt_gd,
    step_alt_gd_multi,
    step_opt_gd,
    step_opt_gd_cached,
    step_round_gd,
    step_sim_gd,
    trajectory_csv,
)
from altgd.errors import (
    CacheShapeMismatch,
    DimensionMismatch,
    DivergenceDetected,
    IncompatibleAlgorithm,
    InvalidBudget,
    MissingDuplicates,
)
from altgd.game import make_network_game, reduce_to_meta
from altgd.gamegen import GeneratorConfig, canonical, dummy_agent_extension, random_instance

import oracles


def pennies():
    return make_network_game({(0, 1): [[1.0]], (1, 0): [[-1.0]]}, (1, 1))


def one(eta):
    return LearningRates(([eta], [eta]))


def pair(x, y):
    return JointState(([x],), ([y],))


# -- single steps against hand-executed values ------------------------------------------


def test_sim_gd_pennies():
    out = step_sim_gd(pennies(), JointState(([1.0], [1.0])), one(1.0))
    assert [v.tolist() for v in out.x] == [[2.0], [0.0]]


def test_sim_gd_fixed_point_at_zero():
    out = step_sim_gd(pennies(), JointState(([0.0], [0.0])), one(0.3))
    assert [v.tolist() for v in out.x] == [[0.0], [0.0]]


def test_2alt_gd_divergence_step():
    half, full = step_2alt_gd(pennies(), pair(0.0, -2.0), 2.0, 2.0)
    assert half.x[0].tolist() == [-4.0] and half.y[0].tolist() == [-2.0]
    assert full.y[0].tolist() == [6.0]


def test_2alt_gd_half_rate():
    _, full = step_2alt_gd(pennies(), pair(1.0, 0.0), 0.5, 0.5)
    assert (full.x[0][0], full.y[0][0]) == (1.0, -0.5)


def test_2alt_gd_fixed_point():
    _, full = step_2alt_gd(pennies(), pair(0.0, 0.0), 0.5, 0.5)
    assert full.x[0][0] == 0.0 and full.y[0][0] == 0.0


def test_round_gd_pennies():
    out = step_round_gd(pennies(), JointState(([1.0], [1.0])), one(1.0))
    assert [v.tolist() for v in out.x] == [[2.0], [-1.0]]


def test_alt_gd_zero_and_missing_duplicates():
    g = pennies()
    z = JointState(([0.0], [0.0]), ([0.0], [0.0]))
    _, full = step_alt_gd_multi(g, z, one(0.5))
    assert full.equals(z)
    with pytest.raises(MissingDuplicates):
        step_alt_gd_multi(g, JointState(([0.0], [0.0])), one(0.5))


def test_opt_gd_first_step_is_plain_gradient_step():
    g = pennies()
    s = JointState(([1.0], [1.0]))
    assert step_opt_gd(g, s, s, one(1.0)).equals(step_sim_gd(g, s, one(1.0)))


def test_opt_gd_zero_state():
    g = pennies()
    z = JointState(([0.0], [0.0]))
    assert step_opt_gd(g, z, z, one(0.5)).equals(z)


def test_cached_opt_gd_cache_shape_checked():
    g = pennies()
    with pytest.raises(CacheShapeMismatch):
        step_opt_gd_cached(g, JointState(([1.0], [1.0])), (np.zeros(2), np.zeros(1)), one(0.5))


def test_incompatible_states():
    with pytest.raises(IncompatibleAlgorithm):
        step_sim_gd(pennies(), JointState(([0.0], [0.0]), ([0.0], [0.0])), one(1.0))
    with pytest.raises(DimensionMismatch):
        step_sim_gd(pennies(), JointState(([0.0, 1.0], [0.0])), one(1.0))


# -- runs against the plain-loop oracle ---------------------------------------------------


def _instance(seed, n=3, k=3):
    game, x0 = random_instance(GeneratorConfig(n, k, seed))
    etas = [0.9 / (k * (n - 1))] * n
    return game, x0, LearningRates.uniform(game.dims, etas[0]), etas


def _lists(state_x):
    return [list(map(float, v)) for v in state_x]


def _close(a, b, tol=1e-12):
    return max(abs(p - q) for u, v in zip(a, b) for p, q in zip(u, v)) <= tol


@pytest.mark.parametrize("summation", ["blas", "exact"])
@pytest.mark.parametrize("algo", ["simgd", "roundgd", "optgd", "optgd_cached"])
def test_single_profile_algorithms_match_loop_oracle(algo, summation):
    game, x0, rates, etas = _instance(11)
    T = 40
    tr = run(game, algo, x0, rates, Budget.iterations(T), summation=summation)
    g = oracles.to_lists(game)
    xs = _lists(x0.x)
    prev = xs
    etav = [[e] * d for e, d in zip(etas, game.dims)]
    for t in range(1, T + 1):
        if algo == "simgd":
            xs = oracles.simgd(g, xs, etav)
        elif algo == "roundgd":
            xs = oracles.roundgd(g, xs, etav)
        else:
            xs, prev = oracles.optgd(g, xs, prev, etav), xs
        assert _close(_lists(tr.states[t].x), xs)


@pytest.mark.parametrize("summation", ["blas", "exact"])
def test_alt_gd_matches_loop_oracle(summation):
    game, x0, rates, etas = _instance(5, n=4, k=2)
    T = 60
    tr = run(game, "altgd", x0, rates, Budget.iterations(T), summation=summation)
    g = oracles.to_lists(game)
    xs = _lists(x0.x)
    ys = _lists(x0.x)
    etav = [[e] * d for e, d in zip(etas, game.dims)]
    for t in range(1, T + 1):
        xs, ys = oracles.altgd(g, xs, ys, etav, etav)
        st = tr.states[t]
        assert _close(_lists(st.x), xs) and _close(_lists(st.y), ys)


def test_2alt_gd_matches_loop_oracle():
    r = np.random.default_rng(9)
    A = r.normal(size=(3, 2))
    game = make_network_game({(0, 1): A, (1, 0): -A.T}, (3, 2))
    x, y = r.normal(size=3), r.normal(size=2)
    eta, gamma = [0.2, 0.3, 0.1], [0.25, 0.15]
    tr = run(game, "2altgd", JointState((x,), (y,)), LearningRates((eta,), (gamma,)),
             Budget.iterations(50))
    ox, oy = list(x), list(y)
    for t in range(1, 51):
        ox, oy = oracles.two_player(A.tolist(), (-A.T).tolist(), ox, oy, eta, gamma)
        st = tr.states[t]
        assert _close([st.x[0]], [ox]) and _close([st.y[0]], [oy])


def test_blas_and_exact_paths_agree():
    game, x0, rates, _ = _instance(3, n=5, k=4)
    for algo in ("altgd", "optgd_cached", "roundgd"):
        a = run(game, algo, x0, rates, Budget.iterations(200))
        b = run(game, algo, x0, rates, Budget.iterations(200), summation="exact")
        assert np.max(np.abs(a.xs - b.xs)) < 1e-11


# -- structural equivalences ---------------------------------------------------------------


def test_alt_gd_equals_2alt_gd_on_meta_game_bitwise():
    game, x0, rates, _ = _instance(21, n=4, k=3)
    meta = reduce_to_meta(game)
    T = 100
    multi = run(game, "altgd", x0, rates, Budget.iterations(T), summation="exact")
    stacked = JointState((x0.stacked_x,), (x0.stacked_x,))
    two = run(meta, "2altgd", stacked,
              LearningRates((rates.stacked_eta,), (rates.stacked_gamma,)),
              Budget.iterations(T), summation="exact")
    assert np.array_equal(multi.xs, two.xs)
    assert np.array_equal(multi.ys, two.ys)
    assert np.array_equal(multi.half_ys, two.half_ys)


def test_alt_gd_with_stale_reads_is_sim_gd_on_both_copies():
    game, x0, rates, _ = _instance(4)
    state = JointState(x0.x, x0.x)
    sim = x0
    for _ in range(30):
        _, state = step_alt_gd_multi(game, state, rates, read_previous=True)
        sim = step_sim_gd(game, sim, rates)
        assert JointState(state.x).equals(sim) and JointState(state.y).equals(sim)


def test_cached_and_uncached_optimistic_agree():
    game, x0, rates, _ = _instance(8, n=5, k=4)
    prev = state = x0
    cstate = x0
    z = initial_cache(game, x0, rates)
    worst = 0.0
    for _ in range(50):
        state, prev = step_opt_gd(game, state, prev, rates), state
        cstate, z = step_opt_gd_cached(game, cstate, z, rates)
        worst = max(worst, float(np.max(np.abs(state.stacked_x - cstate.stacked_x))))
    assert worst < 1e-12


def test_product_counts_per_iteration():
    game, x0, rates, _ = _instance(2, n=4, k=2)
    expect = {"simgd": 4, "roundgd": 4, "altgd": 8, "optgd": 8, "optgd_cached": 4}
    for algo, per in expect.items():
        tr = run(game, algo, x0, rates, Budget.iterations(10))
        assert tr.products == 10 * per
    c = ProductCounter()
    _, _ = step_2alt_gd(pennies(), pair(1.0, 0.0), 0.5, 0.5, counter=c)
    assert c.count == 2


def test_products_budget_stops_before_exceeding():
    game, x0, rates, _ = _instance(2, n=4, k=2)
    tr = run(game, "altgd", x0, rates, Budget("products", 100))
    assert tr.products <= 100 and tr.iterations == 12


def test_seconds_budget_terminates():
    game, x0, rates, _ = _instance(2)
    tr = run(game, "altgd", x0, rates, Budget("seconds", 0.05), record_every=None)
    assert tr.iterations > 0


def test_budget_validation():
    for bad in [("iterations", 0), ("iterations", 2.5), ("hours", 3), ("products", -1)]:
        with pytest.raises(InvalidBudget):
            Budget(*bad)


def test_record_every_and_horizon_sums():
    game, x0, rates, _ = _instance(6)
    full = run(game, "altgd", x0, rates, Budget.iterations(50))
    sparse = run(game, "altgd", x0, rates, Budget.iterations(50), record_every=7,
                 horizons=[10, 50])
    assert sparse.times == [0, 7, 14, 21, 28, 35, 42, 49, 50]
    assert np.array_equal(sparse.xs[-1], full.xs[-1])
    assert np.allclose(sparse.horizon_sums[10][1], full.ys[:10].sum(axis=0), atol=1e-13)
    assert np.allclose(sparse.sum_y, full.ys[:50].sum(axis=0), atol=1e-13)
    assert np.allclose(sparse.average("y", 10), full.ys[:10].mean(axis=0), atol=1e-14)


def test_runner_rejects_bad_inputs():
    game, x0, rates, _ = _instance(6)
    with pytest.raises(IncompatibleAlgorithm):
        run(game, "leapfrog", x0, rates, Budget.iterations(3))
    with pytest.raises(InvalidBudget):
        run(game, "simgd", x0, rates, 3)
    with pytest.raises(IncompatibleAlgorithm):
        run(game, "simgd", JointState(x0.x, x0.x), rates, Budget.iterations(3))


def test_divergence_located_at_first_escape():
    inst = canonical("divergence_instance")
    with pytest.raises(DivergenceDetected) as info:
        run(inst.game, "2altgd", inst.init, inst.rates, Budget.iterations(100), guard=200.0)
    err = info.value
    # |y^t| = 4t + 2 first exceeds 200 at t = 50
    assert err.iteration == 50
    assert err.last_state.max_abs() <= 200.0
    assert err.to_dict()["iteration"] == 50


def test_divergence_guard_catches_overflow():
    g = make_network_game({(0, 1): [[3.0]], (1, 0): [[3.0]]}, (1, 1))
    with pytest.raises(DivergenceDetected):
        run(g, "simgd", JointState(([1.0], [1.0])), one(1.0), Budget.iterations(1000))


def test_pennies_orbit_stays_bounded():
    inst = canonical("matching_pennies_scalar")
    tr = run(inst.game, "2altgd", inst.init, inst.rates, Budget.iterations(10_000))
    assert np.all(np.isfinite(tr.xs)) and np.max(np.abs(tr.xs)) < 2.0


def test_round_robin_on_dummy_game_is_periodic():
    inst = canonical("round_robin_cycle")
    g = dummy_agent_extension(inst.game, 3)
    init = JointState(tuple(inst.init.x) + tuple(np.zeros(1) for _ in range(3)))
    tr = run(g, "roundgd", init, LearningRates.uniform(g.dims, 1.0), Budget.iterations(600))
    assert all(np.array_equal(tr.xs[t], tr.xs[t % 6]) for t in range(601))


# -- trajectory output ------------------------------------------------------------------------


def test_trajectory_csv_layout():
    inst = canonical("matching_pennies_scalar")
    tr = run(inst.game, "2altgd", inst.init, inst.rates, Budget.iterations(6))
    rows = list(csv.reader(io.StringIO(trajectory_csv(tr, include_half=False))))
    assert rows[0] == ["t", "phase", "agent", "component", "value"]
    assert len(rows) == 1 + 7 * 2
    assert {r[2] for r in rows[1:]} == {"1", "2"}
    with_half = list(csv.reader(io.StringIO(trajectory_csv(tr))))
    assert sum(r[1] == "half" for r in with_half) == 12
    # values survive a text round trip exactly
    assert all(float(r[4]) == tr.states[int(r[0])].x[0][0]
               for r in rows[1:] if r[2] == "1")


def test_half_states_are_x_new_y_old():
    inst = canonical("matching_pennies_scalar")
    tr = run(inst.game, "2altgd", inst.init, inst.rates, Budget.iterations(5))
    for k, t in enumerate(tr.half_times):
        h = tr.half_states[k]
        assert h.x[0][0] == tr.states[t].x[0][0] and h.y[0][0] == tr.states[t - 1].y[0][0]


def test_run_against_opponent_layout():
    ys = [[1.0], [-2.0], [0.5]]
    tr = run_against_opponent([[2.0]], [1.0], 0.5, ys)
    assert tr.iterations == 2
    # x1 = 1 + 0.5*2*1, x2 = x1 + 0.5*2*(-2)
    assert tr.xs[:, 0].tolist() == [1.0, 2.0, 0.0]
