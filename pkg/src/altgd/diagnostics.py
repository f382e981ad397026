"""Conservation laws, regret accounting and convergence measurements.

Energies, regret and utility totals can be evaluated with error-free
products and ``math.fsum`` so that checks compare the dynamics, not the
rounding of the checker.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .dynamics import JointState, agent_gradient
from .errors import (
    DimensionMismatch,
    EmptyHorizons,
    MissingHalfStates,
    WrongGameClass,
)
from .exact import bilinear_terms, exact_dot, quadratic_terms
from .game import BilinearGame, MetaGame, NetworkGame, as_bilinear, reduce_to_meta, \
    spectral_norm, sqrt_psd

COMMUTE_TOL = 1e-12
# exact evaluation when (states x strategy pairs) stays below this
EXACT_WORK_LIMIT = 2_000_000


def series_csv(times, values):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "value"])
    for t, v in zip(times, values):
        w.writerow([t, f"{v:.17g}"])
    return buf.getvalue()


# -- the two-player view shared by energy, bounds and volume ------------------------

@dataclass(frozen=True)
class AlternatingView:
    """Stacked two-sided picture of an alternating run."""

    game: BilinearGame
    eta: np.ndarray
    gamma: np.ndarray

    @property
    def a(self):
        return self.game.a


def alternating_view(game, rates, algorithm=None):
    """Bilinear view with stacked rates.

    Two-agent network games are treated as the x/y pair unless
    ``algorithm == "altgd"``; larger games use the meta-game.
    """
    if isinstance(game, (BilinearGame, MetaGame)) or (
            isinstance(game, NetworkGame) and game.n_agents == 2 and algorithm != "altgd"):
        g = as_bilinear(game)
        if isinstance(game, NetworkGame) or (rates.gamma is None and len(rates.eta) == 2):
            eta, gamma = np.asarray(rates.eta[0]), np.asarray(rates.eta[1] if rates.gamma is None
                                                              else rates.gamma[0])
        else:
            eta, gamma = rates.stacked_eta, rates.stacked_gamma
    else:
        g = as_bilinear(reduce_to_meta(game))
        eta, gamma = rates.stacked_eta, rates.stacked_gamma
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (g.dims[0],)).copy()
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (g.dims[1],)).copy()
    return AlternatingView(g, eta, gamma)


def _view_of(traj):
    if traj.algorithm not in ("2altgd", "altgd"):
        raise MissingHalfStates(f"{traj.algorithm} is not an alternating algorithm")
    return alternating_view(traj.game, traj.rates, traj.algorithm)


def _commute_error(P, d):
    D = np.diag(d)
    return float(np.max(np.abs(P @ D - D @ P), initial=0.0))


def _is_diagonal(P):
    return not np.any(P - np.diag(np.diag(P)))


# -- energy ------------------------------------------------------------------------

@dataclass
class EnergyReport:
    kind: str
    times: list
    series: list
    initial: float
    max_relative_drift: float
    relative: bool
    commuting: bool
    commute_error: float
    summation: str

    def to_dict(self):
        return asdict(self)

    def to_csv(self):
        return series_csv(self.times, self.series)


class _EnergyForm:
    def __init__(self, view, sign):
        g = view.game
        self.sign = sign
        self.a = g.a
        P, Q = g.p, g.q
        self.diag = _is_diagonal(P) and _is_diagonal(Q)
        if self.diag:
            self.wx = 1.0 / (np.diag(P) * view.eta)
            self.wy = 1.0 / (np.diag(Q) * view.gamma)
        else:
            self.Wx = np.linalg.solve(P, np.diag(1.0 / view.eta))
            self.Wy = np.linalg.solve(Q, np.diag(1.0 / view.gamma))

    def exact(self, x, y):
        cross = bilinear_terms(x, self.a, y)
        if self.diag:
            return math.fsum(np.concatenate([quadratic_terms(x, self.wx),
                                             quadratic_terms(y, self.wy, self.sign), cross]))
        # a dense weight matrix is applied in floating point first
        return math.fsum(np.concatenate([bilinear_terms(x, self.Wx, x),
                                         self.sign * bilinear_terms(y, self.Wy, y), cross]))

    def fast(self, X, Y):
        if self.diag:
            qx = (X * X) @ self.wx
            qy = (Y * Y) @ self.wy
        else:
            qx = np.einsum("ti,ij,tj->t", X, self.Wx, X)
            qy = np.einsum("ti,ij,tj->t", Y, self.Wy, Y)
        return qx + self.sign * qy + np.einsum("ti,ti->t", X @ self.a, Y)


def _energy(traj, kind, summation):
    view = _view_of(traj)
    want = "pos_neg" if kind == "posneg" else "pos_pos"
    got = view.game.kind()
    if got != want:
        raise WrongGameClass(f"energy_{kind} needs a {want} game, this one is {got}")
    sign = 1.0 if kind == "posneg" else -1.0
    form = _EnergyForm(view, sign)
    err = max(_commute_error(view.game.p, view.eta), _commute_error(view.game.q, view.gamma))
    X, Y = traj.xs, traj.ys
    if summation == "auto":
        work = X.shape[0] * X.shape[1] * Y.shape[1]
        summation = "exact" if work <= EXACT_WORK_LIMIT else "fast"
    if summation == "exact":
        series = [form.exact(x, y) for x, y in zip(X, Y)]
    elif summation == "fast":
        series = [float(v) for v in form.fast(X, Y)]
    else:
        raise ValueError(f"summation must be 'auto', 'exact' or 'fast', got {summation!r}")
    e0 = series[0]
    relative = abs(e0) >= 1e-9
    scale = abs(e0) if relative else 1.0
    drift = max((abs(v - e0) for v in series), default=0.0) / scale
    return EnergyReport(kind, list(traj.times), series, e0, drift, relative,
                        err < COMMUTE_TOL, err, summation)


def energy_posneg(traj, summation="auto"):
    """``|x|^2_{P^-1 D_eta^-1} + |y|^2_{Q^-1 D_gamma^-1} + <x, A y>`` along the recorded states."""
    return _energy(traj, "posneg", summation)


def energy_pospos(traj, summation="auto"):
    """Same as :func:`energy_posneg` with the y term subtracted."""
    return _energy(traj, "pospos", summation)


def energy_report(traj, summation="auto"):
    """Energy of whichever kind the game supports (positive-negative or positive-positive)."""
    kind = "pospos" if _view_of(traj).game.kind() == "pos_pos" else "posneg"
    return _energy(traj, kind, summation)


# -- regret and utility -----------------------------------------------------------

def _weighted(a, inv_eta, b):
    return exact_dot(a, inv_eta * b)


def regret_closed_form(x0, x_final, x_fixed, eta):
    """Total regret of the first mover against ``x_fixed`` from its start and end points.

    ``<x0 - 2x, D^-1 x0> + <2x - x_final, D^-1 x_final>``, expanded into
    four correctly rounded weighted products.
    """
    x0, xf, x = (np.ravel(np.asarray(v, dtype=float)) for v in (x0, x_final, x_fixed))
    eta = np.broadcast_to(np.asarray(eta, dtype=float).ravel(), x0.shape)
    if not (x0.shape == xf.shape == x.shape):
        raise DimensionMismatch("x0, x_final and x_fixed must have the same length")
    if np.any(eta <= 0):
        raise ValueError("learning rates must be positive")
    inv = 1.0 / eta
    return math.fsum([_weighted(x0, inv, x0), -2.0 * _weighted(x, inv, x0),
                      2.0 * _weighted(x, inv, xf), -_weighted(xf, inv, xf)])


@dataclass
class RegretReport:
    fixed_strategy: list
    simulated_total: float
    closed_form_total: float
    half_convention: str
    agent: int
    iterations: int

    def to_dict(self):
        return asdict(self)


def _regret_inputs(traj, agent):
    if traj.algorithm not in ("2altgd", "altgd"):
        raise MissingHalfStates(f"{traj.algorithm} has no half states")
    if not traj.is_complete():
        raise MissingHalfStates("regret needs every iteration recorded (record_every=1)")
    if traj.algorithm == "2altgd":
        if agent != 0:
            raise DimensionMismatch("two-player regret is reported for the first mover (agent 0)")
        xs = traj.xs
        gs = traj.ys @ traj.game.payoff_x.T
        eta = np.asarray(traj.rates.eta[0], dtype=float)
    else:
        game = traj.game
        if not 0 <= agent < game.n_agents:
            raise DimensionMismatch(f"agent {agent} out of range")
        rows = slice(game.offsets[agent], game.offsets[agent + 1])
        xs = traj.xs[:, rows]
        gs = traj.ys @ reduce_to_meta(game).payoff[rows].T
        if game.linear_terms is not None:
            gs = gs - game.linear_terms[agent]
        eta = traj.rates.eta[agent]
    eta = np.broadcast_to(eta, xs[0].shape)
    return xs, gs, eta


def regret_report(traj, agent=0, x_fixed=None, convention="after_x"):
    """Simulated regret next to its closed form.

    ``after_x`` sums ``<2x - x_{t+1} - x_t, g_t>`` for ``t < T`` where ``g_t``
    is the payoff gradient the agent faces from the duplicates' ``y_t``;
    ``after_y`` also charges the final opponent move, ``<x - x_T, g_T>``.
    The closed form always describes the ``after_x`` total.
    """
    if convention not in ("after_x", "after_y"):
        raise ValueError("convention must be 'after_x' or 'after_y'")
    xs, gs, eta = _regret_inputs(traj, agent)
    x = np.zeros_like(xs[0]) if x_fixed is None else np.ravel(np.asarray(x_fixed, dtype=float))
    if x.shape != xs[0].shape:
        raise DimensionMismatch("x_fixed does not match the agent's strategy length")
    T = traj.iterations
    terms = []
    for t in range(T):
        # <2x - x_{t+1} - x_t, g> as three exact dots
        terms += [2.0 * exact_dot(x, gs[t]), -exact_dot(xs[t + 1], gs[t]),
                  -exact_dot(xs[t], gs[t])]
    if convention == "after_y":
        terms += [exact_dot(x, gs[T]), -exact_dot(xs[T], gs[T])]
    simulated = math.fsum(terms)
    closed = regret_closed_form(xs[0], xs[T], x, eta)
    return RegretReport(x.tolist(), simulated, closed, convention, agent, T)


def regret_simulated(traj, agent=0, x_fixed=None, convention="after_x"):
    return regret_report(traj, agent, x_fixed, convention).simulated_total


def regret_series(traj, agent=0, x_fixed=None):
    """Closed-form after-x regret after each of the first mover's updates, ``T = 0 .. iterations``."""
    xs, _, eta = _regret_inputs(traj, agent)
    x = np.zeros_like(xs[0]) if x_fixed is None else np.ravel(np.asarray(x_fixed, dtype=float))
    return [regret_closed_form(xs[0], xs[T], x, eta) for T in range(len(xs))]


@dataclass
class UtilityReport:
    simulated: float
    closed_form: float
    lower_bound: float
    agent: int

    def to_dict(self):
        return asdict(self)


def cumulative_utility(traj, agent=0):
    """Utility summed over the agent's updates, each opponent move counted twice.

    Closed form ``<x_T, D^-1 x_T> - <x_0, D^-1 x_0>``.
    """
    xs, gs, eta = _regret_inputs(traj, agent)
    T = traj.iterations
    terms = []
    for t in range(T):
        terms += [exact_dot(xs[t + 1], gs[t]), exact_dot(xs[t], gs[t])]
    inv = 1.0 / eta
    closed = math.fsum([_weighted(xs[T], inv, xs[T]), -_weighted(xs[0], inv, xs[0])])
    return UtilityReport(math.fsum(terms), closed, -_weighted(xs[0], inv, xs[0]), agent)


# -- bounded orbits and convergence -----------------------------------------------

@dataclass
class OrbitBound:
    """Bound on ``|x|^2_{P^-1 D_eta^-1} + |y|^2_{Q^-1 D_gamma^-1}`` and what it implies."""

    weighted_bound: float
    x_euclidean_bound: float
    y_euclidean_bound: float
    condition_holds: bool
    rate_product: float
    norm_a: float
    initial_energy: float
    x_scale: float
    y_scale: float

    def to_dict(self):
        return asdict(self)


def _start(view, init):
    if isinstance(init, JointState):
        if init.y is None:
            if view.game.dims[0] == init.stacked_x.size:
                return init.stacked_x, init.stacked_x.copy()
            return np.ravel(init.x[0]), np.ravel(init.x[1])
        return init.stacked_x, init.stacked_y
    x, y = init
    return np.ravel(np.asarray(x, dtype=float)), np.ravel(np.asarray(y, dtype=float))


def bounded_orbit_bound(game, init, rates, algorithm=None):
    """Energy-level-set bound on the orbit; ``inf`` when the rate condition fails.

    The condition is ``|P^1/2 D_eta^1/2| * |Q^1/2 D_gamma^1/2| < 2 / |A|``.
    Euclidean bounds follow from ``|x| <= |(P D_eta)^1/2| * |x|_{P^-1 D_eta^-1}``.
    """
    view = alternating_view(game, rates, algorithm)
    g = view.game
    if g.kind() != "pos_neg":
        raise WrongGameClass("bounded orbits need a positive-negative definite game")
    x, y = _start(view, init)
    form = _EnergyForm(view, 1.0)
    e0 = form.exact(x, y)
    x_scale = float(np.linalg.norm(sqrt_psd(g.p) @ np.diag(np.sqrt(view.eta)), 2))
    y_scale = float(np.linalg.norm(sqrt_psd(g.q) @ np.diag(np.sqrt(view.gamma)), 2))
    rho = x_scale * y_scale
    norm_a = spectral_norm(g.a)
    denom = 1.0 - norm_a * rho / 2.0
    holds = denom > 0.0
    if not holds:
        return OrbitBound(math.inf, math.inf, math.inf, False, rho, norm_a, e0, x_scale, y_scale)
    bound = max(e0, 0.0) / denom
    return OrbitBound(bound, x_scale * math.sqrt(bound), y_scale * math.sqrt(bound), True,
                      rho, norm_a, e0, x_scale, y_scale)


@dataclass
class ConvergenceReport:
    horizons: list
    residuals: list
    slope: float
    c_bound: float
    within_bound: list
    condition_holds: bool

    def to_dict(self):
        return asdict(self)

    def to_csv(self):
        return series_csv(self.horizons, self.residuals)


def geometric_horizons(first=16, last=2 ** 17):
    h, out = first, []
    while h <= last:
        out.append(h)
        h *= 2
    return out


def loglog_slope(horizons, residuals):
    pts = [(math.log(h), math.log(r)) for h, r in zip(horizons, residuals) if r > 0]
    if len(pts) < 2:
        return float("nan")
    lx, ly = np.array(pts).T
    return float(np.polyfit(lx, ly, 1)[0])


def _dual_payoff(traj):
    if traj.algorithm == "2altgd":
        return traj.game.payoff_x
    if isinstance(traj.game, NetworkGame):
        return reduce_to_meta(traj.game).payoff
    raise MissingHalfStates("unsupported trajectory game type")


def time_average_convergence(traj, horizons=None):
    """Residual ``|P A sum_{t<T} y_t| / T`` at each horizon, with slope and ``c/T`` check.

    ``c = 2 |P^1/2 D_eta^1/2| sqrt(B) / min(eta)`` where ``B`` is the orbit
    bound; it bounds ``|D_eta^-1 (x_T - x_0)|``, which is exactly the
    summed dual residual.
    """
    horizons = sorted(traj.horizon_sums) if horizons is None else list(horizons)
    if not horizons:
        raise EmptyHorizons("no horizons to evaluate")
    missing = [h for h in horizons if h not in traj.horizon_sums]
    if missing:
        raise EmptyHorizons(f"horizons {missing} were not recorded by the run")
    M = _dual_payoff(traj)
    residuals = []
    for h in horizons:
        sx, sy = traj.horizon_sums[h]
        s = sy if sy is not None else sx
        residuals.append(float(np.linalg.norm(M @ s)) / h)
    bound = bounded_orbit_bound(traj.game, traj.states[0], traj.rates, traj.algorithm)
    if not bound.condition_holds:
        warnings.warn("rate condition fails; no c/T bound applies", RuntimeWarning)
        c = math.inf
    else:
        eta = alternating_view(traj.game, traj.rates, traj.algorithm).eta
        c = 2.0 * bound.x_euclidean_bound / float(np.min(eta))
    within = [r <= c / h for r, h in zip(residuals, horizons)]
    return ConvergenceReport(horizons, residuals, loglog_slope(horizons, residuals), c,
                             within, bound.condition_holds)


def transported_residual(traj):
    """``(|P A sum_{t<T} y_t|, |D_eta^-1 (x_T - x_0)|)`` for an alternating run."""
    M = _dual_payoff(traj)
    eta = alternating_view(traj.game, traj.rates, traj.algorithm).eta
    first, last = traj.states[0], traj.final_state
    lhs = float(np.linalg.norm(M @ traj.sum_y))
    rhs = float(np.linalg.norm((last.stacked_x - first.stacked_x) / eta))
    return lhs, rhs


def time_averages(traj, side="x"):
    """Running means over ``t < T`` of the stacked ``side`` state for every recorded ``T >= 1``.

    Needs a complete trajectory; sums are exact for integer-valued states.
    """
    if not traj.is_complete():
        raise MissingHalfStates("time averages need every iteration recorded")
    vals = traj.xs if side == "x" else traj.ys
    sums = np.cumsum(vals, axis=0)
    return {T: sums[T - 1] / T for T in range(1, len(vals))}


# -- recurrence, volume, chaos ----------------------------------------------------

def recurrence_search(traj, eps_schedule):
    """First recorded ``t >= 1`` with ``|state_t - state_0| < eps`` for each eps (``None`` if absent)."""
    full = traj.xs if traj.ys is None else np.hstack([traj.xs, traj.ys])
    dist = np.linalg.norm(full[1:] - full[0], axis=1)
    times = traj.times[1:]
    out = []
    for eps in eps_schedule:
        hits = np.nonzero(dist < eps)[0]
        out.append((eps, int(times[hits[0]]) if hits.size else None))
    return out


def _lu_det(J):
    lu, piv = scipy.linalg.lu_factor(J)
    swaps = int(np.sum(piv != np.arange(len(piv))))
    return float((-1) ** swaps * np.prod(np.diag(lu)))


def volume_jacobian_check(game2, eta, gamma):
    """Determinants of the two shear Jacobians of one alternating round."""
    g = as_bilinear(game2)
    m, n = g.dims
    eta = np.broadcast_to(np.asarray(eta, dtype=float).ravel(), (m,))
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float).ravel(), (n,))
    if np.any(eta <= 0) or np.any(gamma <= 0):
        raise ValueError("learning rates must be positive")
    j1 = np.eye(m + n)
    j1[:m, m:] = eta[:, None] * g.payoff_x
    j2 = np.eye(m + n)
    j2[m:, :m] = gamma[:, None] * g.payoff_y
    return _lu_det(j1), _lu_det(j2)


def fibonacci(n):
    """Fibonacci numbers extended backwards, ``F(-2) = -1`` and ``F(-1) = 1``."""
    a, b = -1, 1
    if n == -2:
        return a
    for _ in range(n + 1):
        a, b = b, a + b
    return b


@dataclass
class ChaosGeometry:
    t: int
    vertices: list
    area: int
    diameter_squared: int

    def to_dict(self):
        return {"t": self.t, "vertices": [list(v) for v in self.vertices],
                "area": self.area, "diameter_squared": self.diameter_squared}


def chaos_extreme_points(t):
    """Corners of the image of ``[-1, 1]^2`` after ``t`` unit-rate coordination rounds.

    Vertices in cyclic order ``p, q, -p, -q`` with ``p = (F(2t-2), F(2t-1))``
    and ``q = (F(2t+1), F(2t+2))``; area by the shoelace formula and the
    squared diameter, all in integers.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    p = (fibonacci(2 * t - 2), fibonacci(2 * t - 1))
    q = (fibonacci(2 * t + 1), fibonacci(2 * t + 2))
    verts = [p, q, (-p[0], -p[1]), (-q[0], -q[1])]
    twice = sum(verts[i][0] * verts[(i + 1) % 4][1] - verts[(i + 1) % 4][0] * verts[i][1]
                for i in range(4))
    diam = max((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 for a in verts for b in verts)
    return ChaosGeometry(t, verts, abs(twice) // 2, diam)


# -- round-robin regret -------------------------------------------------------------

@dataclass
class RoundRobinRegret:
    rounds: int
    regret: float
    utility: float
    fixed_payoff: float
    final_state: JointState = field(repr=False)

    def to_dict(self):
        return {"rounds": self.rounds, "regret": self.regret, "utility": self.utility,
                "fixed_payoff": self.fixed_payoff, "final_state": self.final_state.to_dict()}


def round_robin_regret(game, init, rates, rounds, agent=0, x_fixed=None):
    """Regret of ``agent`` under round-robin play, charged after every single update.

    One round is ``n_agents`` update events; after each event the agent
    collects ``<x_agent, g_agent>`` while ``x_fixed`` would have collected
    ``<x_fixed, g_agent>``.
    """
    xs = [np.asarray(v, dtype=float).ravel().copy() for v in init.x]
    x = np.zeros(game.dims[agent]) if x_fixed is None else np.ravel(np.asarray(x_fixed, float))
    got, alt = [], []
    for _ in range(rounds):
        for i in range(game.n_agents):
            xs[i] = xs[i] + rates.eta[i] * agent_gradient(game, i, xs)
            g = agent_gradient(game, agent, xs)
            got.append(exact_dot(xs[agent], g))
            alt.append(exact_dot(x, g))
    utility, fixed = math.fsum(got), math.fsum(alt)
    return RoundRobinRegret(rounds, fixed - utility, utility, fixed, JointState(tuple(xs)))
