"""Update rules for network games and a trajectory runner.

Six algorithms are available by name in :func:`run`:

``simgd``         simultaneous gradient steps from the previous profile
``2altgd``        two players alternate: x moves first, y responds to the new x
``roundgd``       agents move one at a time in index order, reading fresh values
``altgd``         every agent gets a duplicate; originals move, then duplicates
``optgd``         optimistic step ``x + eta*(2 g_t - g_{t-1})``, both gradients evaluated
``optgd_cached``  the same iterates with the previous scaled gradient stored

Gradients are the experienced payoffs ``sum_j blocks[i,j] @ x_j - b_i``.
With ``summation="exact"`` every row sum is taken with ``math.fsum`` so
results do not depend on how the products are grouped.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    CacheShapeMismatch,
    DimensionMismatch,
    DivergenceDetected,
    IncompatibleAlgorithm,
    InvalidBudget,
    MissingDuplicates,
)
from .exact import fsum_matvec
from .game import BilinearGame, MetaGame, NetworkGame, as_bilinear, reduce_to_meta

ALGORITHMS = ("simgd", "2altgd", "roundgd", "altgd", "optgd", "optgd_cached")
ALTERNATING = ("2altgd", "altgd")
DIVERGENCE_GUARD = 1e150
GUARD_CHECK_EVERY = 64
CLOCK_CHECK_EVERY = 64


# -- state and rates -----------------------------------------------------------

def _vec(v):
    a = np.array(v, dtype=float).reshape(-1)
    return a


@dataclass(frozen=True)
class JointState:
    """Per-agent strategies ``x`` and, for duplicated play, ``y``."""

    x: tuple
    y: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(_vec(v) for v in self.x))
        if self.y is not None:
            object.__setattr__(self, "y", tuple(_vec(v) for v in self.y))

    @property
    def stacked_x(self):
        return np.concatenate(self.x)

    @property
    def stacked_y(self):
        return None if self.y is None else np.concatenate(self.y)

    def max_abs(self):
        m = max(float(np.max(np.abs(v), initial=0.0)) for v in self.x)
        if self.y is not None:
            m = max(m, max(float(np.max(np.abs(v), initial=0.0)) for v in self.y))
        return m

    def equals(self, other):
        if (self.y is None) != (other.y is None) or len(self.x) != len(other.x):
            return False
        pairs = list(zip(self.x, other.x))
        if self.y is not None:
            pairs += list(zip(self.y, other.y))
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)

    def to_dict(self):
        return {"x": [v.tolist() for v in self.x],
                "y": None if self.y is None else [v.tolist() for v in self.y]}

    @classmethod
    def from_stacked(cls, dims, x, y=None):
        off = np.concatenate([[0], np.cumsum(dims)]).astype(int)
        split = lambda s: tuple(np.asarray(s, dtype=float)[off[i]:off[i + 1]].copy()
                                for i in range(len(dims)))
        return cls(split(x), None if y is None else split(y))


@dataclass(frozen=True)
class LearningRates:
    """Per-agent positive step sizes: ``eta`` for originals, ``gamma`` for duplicates."""

    eta: tuple
    gamma: tuple | None = None

    def __post_init__(self):
        eta = tuple(_vec(v) for v in self.eta)
        gamma = None if self.gamma is None else tuple(_vec(v) for v in self.gamma)
        for v in eta + (gamma or ()):
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValueError("learning rates must be finite and strictly positive")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def uniform(cls, dims, eta, gamma=None):
        e = tuple(np.full(d, float(eta)) for d in dims)
        g = None if gamma is None else tuple(np.full(d, float(gamma)) for d in dims)
        return cls(e, g)

    @property
    def stacked_eta(self):
        return np.concatenate(self.eta)

    @property
    def stacked_gamma(self):
        return np.concatenate(self.gamma if self.gamma is not None else self.eta)

    def duplicate_rates(self):
        return self.gamma if self.gamma is not None else self.eta

    def to_dict(self):
        return {"eta": [v.tolist() for v in self.eta],
                "gamma": None if self.gamma is None else [v.tolist() for v in self.gamma]}


class ProductCounter:
    """Counts per-agent gradient evaluations (one per agent block row sum)."""

    def __init__(self):
        self.count = 0

    def add(self, n):
        self.count += n


# -- gradient evaluation ---------------------------------------------------------

def _check_profile(game, xs, what="x"):
    if len(xs) != game.n_agents:
        raise DimensionMismatch(f"{what} has {len(xs)} agents, game has {game.n_agents}")
    for i, (v, d) in enumerate(zip(xs, game.dims)):
        if v.size != d:
            raise DimensionMismatch(f"{what}[{i}] has length {v.size}, expected {d}")


def _row_blocks(game, i):
    return np.hstack([game.blocks[(i, j)] for j in range(game.n_agents) if j != i])


def agent_gradient(game, i, xs, summation="blas"):
    """Gradient of agent ``i`` against the profile ``xs``."""
    if summation == "exact":
        others = np.concatenate([xs[j] for j in range(game.n_agents) if j != i])
        g = fsum_matvec(_row_blocks(game, i), others)
    else:
        g = np.zeros(game.dims[i])
        for j in range(game.n_agents):
            if j != i:
                g = g + game.blocks[(i, j)] @ xs[j]
    if game.linear_terms is not None:
        g = g - game.linear_terms[i]
    return g


def _gradients(game, xs, summation, counter):
    if counter is not None:
        counter.add(game.n_agents)
    return [agent_gradient(game, i, xs, summation) for i in range(game.n_agents)]


def _matvec(M, v, summation):
    return fsum_matvec(M, v) if summation == "exact" else M @ v


# -- steppers ---------------------------------------------------------------------

def step_sim_gd(game, state, rates, summation="blas", counter=None):
    """Every agent steps along its gradient at the previous profile."""
    if state.y is not None:
        raise IncompatibleAlgorithm("simultaneous play takes a state without duplicates")
    _check_profile(game, state.x)
    grads = _gradients(game, state.x, summation, counter)
    return JointState(tuple(x + e * g for x, e, g in zip(state.x, rates.eta, grads)))


def _two_player(game2):
    if isinstance(game2, (BilinearGame, MetaGame)):
        return as_bilinear(game2)
    if isinstance(game2, NetworkGame):
        return as_bilinear(game2)
    raise IncompatibleAlgorithm(f"2altgd needs a two-player game, got {type(game2).__name__}")


def step_2alt_gd(game2, state, eta, gamma, summation="blas", counter=None):
    """One alternating round of a two-player game.

    ``state`` carries the x player in ``state.x[0]`` and the y player in
    ``state.y[0]``. Returns the half state ``(x_t, y_{t-1})`` and the full
    state ``(x_t, y_t)``.
    """
    g = _two_player(game2)
    if state.y is None or len(state.x) != 1 or len(state.y) != 1:
        raise DimensionMismatch("2altgd state must hold one x vector and one y vector")
    x, y = state.x[0], state.y[0]
    if x.size != g.dims[0] or y.size != g.dims[1]:
        raise DimensionMismatch(f"state sizes {(x.size, y.size)} do not fit game {g.dims}")
    eta = np.broadcast_to(_vec(eta), x.shape)
    gamma = np.broadcast_to(_vec(gamma), y.shape)
    x_new = x + eta * _matvec(g.payoff_x, y, summation)
    y_new = y + gamma * _matvec(g.payoff_y, x_new, summation)
    if counter is not None:
        counter.add(2)
    return JointState((x_new,), (y,)), JointState((x_new,), (y_new,))


def step_round_gd(game, state, rates, summation="blas", counter=None):
    """Agents move in index order, each seeing the updates made before it."""
    if state.y is not None:
        raise IncompatibleAlgorithm("round-robin play takes a state without duplicates")
    _check_profile(game, state.x)
    xs = list(state.x)
    for i in range(game.n_agents):
        xs[i] = xs[i] + rates.eta[i] * agent_gradient(game, i, xs, summation)
    if counter is not None:
        counter.add(game.n_agents)
    return JointState(tuple(xs))


def step_alt_gd_multi(game, state, rates, summation="blas", counter=None,
                      read_previous=False):
    """Originals respond to the duplicates, then duplicates respond to the new originals.

    With ``read_previous=True`` the duplicates read the originals from before
    this round instead, which turns the scheme into two simultaneous copies.
    """
    if state.y is None:
        raise MissingDuplicates("alternating multiagent play needs duplicate strategies y")
    _check_profile(game, state.x)
    _check_profile(game, state.y, "y")
    gx = _gradients(game, state.y, summation, counter)
    x_new = tuple(x + e * g for x, e, g in zip(state.x, rates.eta, gx))
    source = state.x if read_previous else x_new
    gy = _gradients(game, source, summation, counter)
    y_new = tuple(y + e * g for y, e, g in zip(state.y, rates.duplicate_rates(), gy))
    return JointState(x_new, state.y), JointState(x_new, y_new)


def step_opt_gd(game, state, prev_state, rates, summation="blas", counter=None):
    """Optimistic step; both gradients are evaluated afresh.

    Pass ``prev_state = state`` on the first iteration, which reduces the
    step to a plain gradient step.
    """
    _check_profile(game, state.x)
    _check_profile(game, prev_state.x, "previous x")
    g_now = _gradients(game, state.x, summation, counter)
    g_prev = _gradients(game, prev_state.x, summation, counter)
    return JointState(tuple(x + e * (2.0 * a - b)
                            for x, e, a, b in zip(state.x, rates.eta, g_now, g_prev)))


def initial_cache(game, state, rates, summation="blas", counter=None):
    """Scaled gradients ``eta_i * g_i`` at ``state``; the cache for the first step."""
    grads = _gradients(game, state.x, summation, counter)
    return tuple(e * g for e, g in zip(rates.eta, grads))


def step_opt_gd_cached(game, state, z_cache, rates, summation="blas", counter=None):
    """Optimistic step reusing the stored ``z = eta * g`` from the previous round.

    Returns the new state and the new cache. Seed the cache with
    :func:`initial_cache` on the starting state.
    """
    _check_profile(game, state.x)
    if len(z_cache) != game.n_agents or any(
            np.size(z) != d for z, d in zip(z_cache, game.dims)):
        raise CacheShapeMismatch("cache does not match the game's dimensions")
    z_new = initial_cache(game, state, rates, summation, counter)
    x_new = tuple(x + 2.0 * zn - zo for x, zn, zo in zip(state.x, z_new, z_cache))
    return JointState(x_new), z_new


# -- runner ---------------------------------------------------------------------

@dataclass(frozen=True)
class Budget:
    """Stopping rule: ``iterations``, ``seconds`` (wall clock) or ``products``."""

    mode: str
    limit: float

    def __post_init__(self):
        if self.mode not in ("iterations", "seconds", "products"):
            raise InvalidBudget(f"unknown budget mode {self.mode!r}")
        if not (self.limit > 0) or self.limit != self.limit:
            raise InvalidBudget(f"budget limit must be positive, got {self.limit}")
        if self.mode != "seconds" and int(self.limit) != self.limit:
            raise InvalidBudget(f"{self.mode} budget must be a whole number")

    @classmethod
    def iterations(cls, n):
        return cls("iterations", n)

    def to_dict(self):
        return {"mode": self.mode, "limit": self.limit}


def _split(v, dims):
    off = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    return tuple(v[off[i]:off[i + 1]].copy() for i in range(len(dims)))


@dataclass
class Trajectory:
    """Recorded run.

    Row ``k`` of ``xs``/``ys`` is the stacked state at iteration ``times[k]``.
    Alternating runs also keep ``half_ys``: the y side just before the
    y update, so the half state at ``half_times[k]`` is
    ``(x_t, y_{t-1})``. ``sum_x``/``sum_y`` are running sums of the
    stacked states over ``t = 0 .. iterations-1`` and ``horizon_sums``
    copies them at the requested horizons.
    """

    algorithm: str
    game: object
    rates: LearningRates
    times: list
    xs: np.ndarray
    ys: np.ndarray | None
    x_dims: tuple
    y_dims: tuple | None
    half_times: list = field(default_factory=list)
    half_ys: np.ndarray | None = None
    iterations: int = 0
    sum_x: np.ndarray | None = None
    sum_y: np.ndarray | None = None
    horizon_sums: dict = field(default_factory=dict)
    products: int = 0
    record_every: int | None = 1

    def _state(self, x, y):
        return JointState(_split(x, self.x_dims),
                          None if y is None else _split(y, self.y_dims))

    def state_row(self, k):
        return self._state(self.xs[k], None if self.ys is None else self.ys[k])

    @cached_property
    def states(self):
        return [self.state_row(k) for k in range(len(self.times))]

    @cached_property
    def half_states(self):
        # half times are the recorded times after 0, so x comes from the next row
        return [self._state(self.xs[k + 1], self.half_ys[k])
                for k in range(len(self.half_times))]

    @property
    def final_state(self):
        return self.state_row(len(self.times) - 1)

    @property
    def alternating(self):
        return self.algorithm in ALTERNATING

    def average(self, side="y", horizon=None):
        """Time average over ``t < horizon`` (defaults to the full run)."""
        if horizon is None:
            horizon = self.iterations
            sums = (self.sum_x, self.sum_y)
        else:
            sums = self.horizon_sums[horizon]
        s = sums[1] if side == "y" and sums[1] is not None else sums[0]
        return s / horizon

    def state_at(self, t):
        return self.state_row(self.times.index(t))

    def is_complete(self):
        return len(self.times) == self.iterations + 1 and self.times[-1] == self.iterations


def _agent_labels(algorithm, state):
    if algorithm == "2altgd":
        return ["1"], ["2"]
    xs = [str(i + 1) for i in range(len(state.x))]
    ys = None if state.y is None else [f"{i + 1}d" for i in range(len(state.y))]
    return xs, ys


def _state_rows(t, phase, state, labels):
    xl, yl = labels
    for lab, v in zip(xl, state.x):
        for c, val in enumerate(v):
            yield t, phase, lab, c + 1, val
    if state.y is not None:
        for lab, v in zip(yl, state.y):
            for c, val in enumerate(v):
                yield t, phase, lab, c + 1, val


def trajectory_rows(traj, include_half=True):
    labels = _agent_labels(traj.algorithm, traj.states[0])
    halves = dict(zip(traj.half_times, traj.half_states)) if include_half else {}
    for t, st in zip(traj.times, traj.states):
        if t in halves:
            yield from _state_rows(t, "half", halves[t], labels)
        yield from _state_rows(t, "full", st, labels)


def trajectory_csv(traj, include_half=True):
    """CSV text with columns ``t,phase,agent,component,value`` (17 significant digits)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "phase", "agent", "component", "value"])
    for t, phase, lab, comp, val in trajectory_rows(traj, include_half):
        w.writerow([t, phase, lab, comp, f"{val:.17g}"])
    return buf.getvalue()


def _normalize_two_player(game, init, rates):
    g = _two_player(game)
    if init.y is None:
        if len(init.x) != 2:
            raise IncompatibleAlgorithm("2altgd needs (x, y) or a two-agent profile")
        init = JointState((init.x[0],), (init.x[1],))
    if rates.gamma is None and len(rates.eta) == 2:
        rates = LearningRates((rates.eta[0],), (rates.eta[1],))
    elif rates.gamma is None:
        rates = LearningRates(rates.eta, rates.eta)
    if init.x[0].size != g.dims[0] or init.y[0].size != g.dims[1]:
        raise DimensionMismatch("initial state does not fit the two-player game")
    return g, init, rates


class _Kernel:
    """Fast stacked-vector update for one algorithm (BLAS matvecs)."""

    def __init__(self, algorithm, game, init, rates):
        self.algorithm = algorithm
        if algorithm == "2altgd":
            self.mx, self.my = game.payoff_x, game.payoff_y
            self.bx = self.by = None
            self.eta = rates.stacked_eta
            self.gamma = rates.stacked_gamma
            self.per_iter = 2
            self.dims = None
        else:
            meta = reduce_to_meta(game)
            self.mx = self.my = np.ascontiguousarray(meta.payoff)
            b = None if game.linear_terms is None else np.concatenate(game.linear_terms)
            self.bx = self.by = b
            self.eta = rates.stacked_eta
            self.gamma = rates.stacked_gamma if algorithm == "altgd" else None
            self.offsets = meta.agent_offsets
            n = game.n_agents
            self.per_iter = {"simgd": n, "roundgd": n, "altgd": 2 * n,
                             "optgd": 2 * n, "optgd_cached": n}[algorithm]
            self.dims = game.dims
        self.x = init.stacked_x.copy()
        self.y = None if init.y is None else init.stacked_y.copy()
        self.prev = None
        if algorithm == "optgd":
            self.prev = self.x.copy()
        elif algorithm == "optgd_cached":
            self.prev = self.eta * self._grad(self.x)

    def _grad(self, v):
        g = self.mx @ v
        return g if self.bx is None else g - self.bx

    def step(self):
        a = self.algorithm
        if a == "simgd":
            self.x = self.x + self.eta * self._grad(self.x)
        elif a in ("2altgd", "altgd"):
            gx = self.mx @ self.y
            if self.bx is not None:
                gx = gx - self.bx
            self.x = self.x + self.eta * gx
            gy = self.my @ self.x
            if self.by is not None:
                gy = gy - self.by
            self.y = self.y + self.gamma * gy
        elif a == "roundgd":
            x = self.x.copy()
            off = self.offsets
            for i in range(len(off) - 1):
                sl = slice(off[i], off[i + 1])
                g = self.mx[sl] @ x
                if self.bx is not None:
                    g = g - self.bx[sl]
                x[sl] = x[sl] + self.eta[sl] * g
            self.x = x
        elif a == "optgd":
            g_now = self._grad(self.x)
            g_prev = self._grad(self.prev)
            self.prev = self.x
            self.x = self.x + self.eta * (2.0 * g_now - g_prev)
        elif a == "optgd_cached":
            z = self.eta * self._grad(self.x)
            self.x = self.x + 2.0 * z - self.prev
            self.prev = z

    def state(self):
        return self._state(self.x, self.y)

    def _state(self, x, y):
        if self.algorithm == "2altgd":
            return JointState((x.copy(),), (y.copy(),))
        return JointState.from_stacked(self.dims, x, y)

    def snapshot(self):
        return (self.x.copy(), None if self.y is None else self.y.copy(),
                None if self.prev is None else self.prev.copy())

    def restore(self, snap):
        self.x = snap[0].copy()
        self.y = None if snap[1] is None else snap[1].copy()
        self.prev = None if snap[2] is None else snap[2].copy()

    def magnitude(self):
        m = float(np.max(np.abs(self.x)))
        if self.y is not None:
            m = max(m, float(np.max(np.abs(self.y))))
        return m


class _ExactStepper:
    """Update via the public per-agent steppers (used for ``summation="exact"``)."""

    def __init__(self, algorithm, game, init, rates, summation):
        self.algorithm, self.game, self.rates, self.summation = algorithm, game, rates, summation
        self.cur = init
        self.prev = None
        self.last_half = None
        if algorithm == "optgd":
            self.prev = init
        elif algorithm == "optgd_cached":
            self.prev = initial_cache(game, init, rates, summation)
        n = getattr(game, "n_agents", 1)
        self.per_iter = {"simgd": n, "roundgd": n, "altgd": 2 * n, "optgd": 2 * n,
                         "optgd_cached": n, "2altgd": 2}[algorithm]

    @property
    def x(self):
        return self.cur.stacked_x

    @property
    def y(self):
        return self.cur.stacked_y

    def step(self):
        a, g, r, s = self.algorithm, self.game, self.rates, self.summation
        if a == "simgd":
            self.cur = step_sim_gd(g, self.cur, r, s)
        elif a == "roundgd":
            self.cur = step_round_gd(g, self.cur, r, s)
        elif a == "altgd":
            self.last_half, self.cur = step_alt_gd_multi(g, self.cur, r, s)
        elif a == "2altgd":
            self.last_half, self.cur = step_2alt_gd(g, self.cur, r.eta[0], r.gamma[0], s)
        elif a == "optgd":
            nxt = step_opt_gd(g, self.cur, self.prev, r, s)
            self.prev, self.cur = self.cur, nxt
        elif a == "optgd_cached":
            self.cur, self.prev = step_opt_gd_cached(g, self.cur, self.prev, r, s)

    def state(self):
        return self.cur

    def snapshot(self):
        return (self.cur, self.prev, self.last_half)

    def restore(self, snap):
        self.cur, self.prev, self.last_half = snap

    def magnitude(self):
        return self.cur.max_abs()


def _check_rates(algorithm, game, rates):
    if algorithm == "2altgd":
        return
    if len(rates.eta) != game.n_agents or any(
            e.size != d for e, d in zip(rates.eta, game.dims)):
        raise DimensionMismatch("learning rates do not match the game's dimensions")
    if algorithm == "altgd" and rates.gamma is not None and any(
            e.size != d for e, d in zip(rates.gamma, game.dims)):
        raise DimensionMismatch("duplicate learning rates do not match the game's dimensions")


def run(game, algorithm, init, rates, budget, record_every=1, horizons=None,
        summation="blas", guard=DIVERGENCE_GUARD, metadata=None):
    """Run ``algorithm`` from ``init`` until ``budget`` is spent.

    ``record_every=k`` keeps every k-th state (``None`` keeps only the first
    and last). ``horizons`` lists iteration counts at which the running
    sums are copied. Any strategy component exceeding ``guard`` in magnitude
    (or turning non-finite) raises :class:`DivergenceDetected` carrying the
    first offending iteration and the last state inside the guard.
    """
    if algorithm not in ALGORITHMS:
        raise IncompatibleAlgorithm(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if not isinstance(budget, Budget):
        raise InvalidBudget("budget must be a Budget instance")
    if record_every is not None and (int(record_every) != record_every or record_every < 1):
        raise ValueError("record_every must be a positive integer or None")

    if algorithm == "2altgd":
        game, init, rates = _normalize_two_player(game, init, rates)
    else:
        if isinstance(game, (BilinearGame, MetaGame)):
            raise IncompatibleAlgorithm(f"{algorithm} runs on a NetworkGame")
        if algorithm == "altgd":
            if init.y is None:
                init = JointState(init.x, init.x)
        elif init.y is not None:
            raise IncompatibleAlgorithm(f"{algorithm} takes a state without duplicates")
        _check_profile(game, init.x)
        if init.y is not None:
            _check_profile(game, init.y, "y")
        _check_rates(algorithm, game, rates)

    if summation == "exact":
        eng = _ExactStepper(algorithm, game, init, rates, summation)
    elif summation == "blas":
        eng = _Kernel(algorithm, game, init, rates)
    else:
        raise ValueError(f"summation must be 'blas' or 'exact', got {summation!r}")

    alternating = algorithm in ALTERNATING
    horizons = sorted(set(int(h) for h in (horizons or ())))
    pending = list(horizons)
    times, xs, ys, half_times, half_ys = [0], [eng.x.copy()], [], [], []
    if eng.y is not None:
        ys.append(eng.y.copy())
    sum_x = np.zeros_like(xs[0])
    sum_y = None if eng.y is None else np.zeros_like(ys[0])
    horizon_sums = {}
    products = 0
    limit = budget.limit
    start = time.perf_counter()
    t = 0
    snap = (0, eng.snapshot(), init)

    def over_budget():
        if budget.mode == "iterations":
            return t >= limit
        if budget.mode == "products":
            return products + eng.per_iter > limit
        if t % CLOCK_CHECK_EVERY:
            return False
        return time.perf_counter() - start >= limit

    def tripped():
        return not (eng.magnitude() <= guard)

    def record(y_before):
        times.append(t)
        xs.append(eng.x.copy())
        if eng.y is not None:
            ys.append(eng.y.copy())
        if alternating:
            half_times.append(t)
            half_ys.append(y_before.copy())

    y_before = None
    while not over_budget():
        if pending and pending[0] == t:
            horizon_sums[t] = (sum_x.copy(), None if sum_y is None else sum_y.copy())
            pending.pop(0)
        sum_x += eng.x
        if sum_y is not None:
            sum_y += eng.y
        y_before = eng.y
        eng.step()
        t += 1
        products += eng.per_iter
        if record_every is not None and t % record_every == 0:
            record(y_before)
        if t % GUARD_CHECK_EVERY == 0:
            if tripped():
                _locate_divergence(eng, snap, t, guard, algorithm, metadata)
            snap = (t, eng.snapshot(), eng.state())
    if tripped():
        _locate_divergence(eng, snap, t, guard, algorithm, metadata)
    if pending and pending[0] == t:
        horizon_sums[t] = (sum_x.copy(), None if sum_y is None else sum_y.copy())
    if times[-1] != t:
        record(y_before)
    if algorithm == "2altgd":
        x_dims, y_dims = (game.dims[0],), (game.dims[1],)
    else:
        x_dims = tuple(game.dims)
        y_dims = x_dims if ys else None
    return Trajectory(algorithm, game, rates, times, np.array(xs),
                      np.array(ys) if ys else None, x_dims, y_dims, half_times,
                      np.array(half_ys) if half_ys else None, t, sum_x, sum_y,
                      horizon_sums, products, record_every)


def _locate_divergence(eng, snap, t_end, guard, algorithm, metadata):
    t0, saved, last_state = snap
    eng.restore(saved)
    t = t0
    while t < t_end:
        eng.step()
        t += 1
        if not (eng.magnitude() <= guard):
            raise DivergenceDetected(
                f"{algorithm} left the guard |value| <= {guard:g} at iteration {t}",
                iteration=t, last_state=last_state, threshold=guard,
                metadata=dict(metadata or {}, algorithm=algorithm))
        last_state = eng.state()
    raise DivergenceDetected(  # pragma: no cover - replay is deterministic
        f"{algorithm} diverged before iteration {t_end}", iteration=t_end,
        last_state=last_state, threshold=guard, metadata=dict(metadata or {}))


def run_against_opponent(payoff, x0, eta, opponent):
    """Play ``x_{t+1} = x_t + eta * payoff @ y_t`` against a fixed sequence ``y_0..y_T``.

    Returns a complete two-player :class:`Trajectory` (``2altgd`` layout)
    whose y path is ``opponent``. ``iterations`` equals ``len(opponent) - 1``
    so that the last x is ``x_T`` with ``y_T`` the final opponent move.
    """
    payoff = np.asarray(payoff, dtype=float)
    eta = np.broadcast_to(_vec(eta), (payoff.shape[0],)).copy()
    ys = np.array([_vec(y) for y in opponent])
    xs = [_vec(x0)]
    for t in range(1, len(ys)):
        xs.append(xs[-1] + eta * (payoff @ ys[t - 1]))
    zeros = np.zeros((payoff.shape[1], payoff.shape[0]))
    game = BilinearGame(payoff, zeros, np.eye(payoff.shape[0]), np.eye(payoff.shape[1]),
                        "oblivious opponent")
    n = len(ys) - 1
    rates = LearningRates((eta,), (np.ones(payoff.shape[1]),))
    return Trajectory("2altgd", game, rates, list(range(n + 1)), np.array(xs), ys,
                      (payoff.shape[0],), (payoff.shape[1],), list(range(1, n + 1)),
                      ys[:-1].copy(), n)


def stacked_states(traj, side="x"):
    """Array of recorded stacked states, one row per recorded time."""
    return traj.xs if side == "x" else traj.ys


__all__ = [
    "ALGORITHMS", "Budget", "JointState", "LearningRates", "ProductCounter", "Trajectory",
    "agent_gradient", "initial_cache", "run", "run_against_opponent", "stacked_states",
    "step_2alt_gd", "step_alt_gd_multi", "step_opt_gd", "step_opt_gd_cached",
    "step_round_gd", "step_sim_gd", "trajectory_csv", "trajectory_rows",
]
