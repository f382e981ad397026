"""Network matrix games: representation, classification and reductions.

Agents are indexed from 0 in the Python API. The JSON game format uses
1-based ``"i,j"`` keys (see :func:`game_to_dict`).

A block ``blocks[(i, j)]`` is the payoff matrix agent ``i`` actually
experiences against agent ``j``. When per-agent transforms ``P_i`` are
given, each block is understood as ``P_i @ C_ij`` and the underlying
matrices ``C_ij`` are recovered by solving with ``P_i``. Without transforms
``C_ij`` is the block itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NonFiniteEntry,
    NotAnEquilibrium,
    NotPositiveDefinite,
    ShapeMismatch,
    SingularTransform,
)

SYMMETRY_TOL = 1e-12
PD_RELATIVE_TOL = 1e-10
CLASSIFY_TOL = 1e-9
POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_matrix(value, name, shape=None):
    a = np.asarray(value, dtype=float)
    if a.ndim == 1 and shape is not None and shape[0] == 1 and a.size == shape[1]:
        a = a.reshape(shape)
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be a 2-d matrix, got ndim={a.ndim}")
    if shape is not None and a.shape != tuple(shape):
        raise ShapeMismatch(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteEntry(f"{name} contains non-finite entries")
    return _frozen(a)


def _as_vector(value, name, length=None):
    a = np.asarray(value, dtype=float).reshape(-1)
    if length is not None and a.size != length:
        raise DimensionMismatch(f"{name} has length {a.size}, expected {length}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteEntry(f"{name} contains non-finite entries")
    return a


def check_positive_definite(P, name="matrix"):
    """Raise unless ``P`` is symmetric with a strictly positive spectrum.

    Symmetry is checked to ``1e-12`` (scaled by the largest entry when that
    exceeds one); positivity requires the smallest eigenvalue to exceed
    ``1e-10`` times the largest eigenvalue magnitude.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise NonFiniteEntry(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(P)))) if P.size else 1.0
    if np.max(np.abs(P - P.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(P)
    top = float(np.max(np.abs(eig)))
    if top == 0.0 or eig[0] <= PD_RELATIVE_TOL * top:
        raise NotPositiveDefinite(
            f"{name} is not positive-definite (smallest eigenvalue {eig[0]:.6g})"
        )


def sqrt_psd(W):
    """Symmetric square root of a positive-definite matrix."""
    vals, vecs = np.linalg.eigh(np.asarray(W, dtype=float))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


@dataclass(frozen=True)
class NetworkGame:
    n_agents: int
    dims: tuple
    blocks: Mapping
    transforms: tuple | None = None
    linear_terms: tuple | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def offsets(self):
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.dims)]))

    @property
    def size(self):
        return int(sum(self.dims))

    def block(self, i, j):
        if i == j:
            return np.zeros((self.dims[i], self.dims[i]))
        return self.blocks[(i, j)]

    def transform(self, i):
        if self.transforms is None:
            return np.eye(self.dims[i])
        return self.transforms[i]

    def underlying_block(self, i, j):
        """The matrix ``C_ij`` with ``P_i @ C_ij`` equal to the stored block."""
        if self.transforms is None or i == j:
            return self.block(i, j)
        try:
            return np.linalg.solve(self.transforms[i], self.blocks[(i, j)])
        except np.linalg.LinAlgError as exc:
            raise SingularTransform(f"transform of agent {i} is singular") from exc

    def split(self, stacked):
        """Split a stacked profile into per-agent vectors."""
        stacked = np.asarray(stacked, dtype=float).reshape(-1)
        if stacked.size != self.size:
            raise DimensionMismatch(
                f"stacked profile has length {stacked.size}, expected {self.size}"
            )
        off = self.offsets
        return [stacked[off[i]:off[i + 1]].copy() for i in range(self.n_agents)]

    def gradients(self, xs):
        """Per-agent payoff gradients ``sum_j blocks[i,j] @ x_j - b_i``."""
        if len(xs) != self.n_agents:
            raise DimensionMismatch(f"expected {self.n_agents} agent vectors, got {len(xs)}")
        out = []
        for i in range(self.n_agents):
            g = np.zeros(self.dims[i])
            for j in range(self.n_agents):
                if j != i:
                    g = g + self.blocks[(i, j)] @ xs[j]
            if self.linear_terms is not None:
                g = g - self.linear_terms[i]
            out.append(g)
        return out


def make_network_game(blocks, dims, transforms=None, linear_terms=None, metadata=None):
    """Validate inputs and build an immutable :class:`NetworkGame`.

    ``blocks`` maps 0-based ``(i, j)`` pairs to ``dims[i] x dims[j]``
    matrices. Missing off-diagonal pairs are filled with zeros; diagonal
    entries are rejected unless they are all zero (they are never stored).
    """
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    if n < 2:
        raise ShapeMismatch("a network game needs at least two agents")
    if any(d < 1 for d in dims):
        raise ShapeMismatch("every agent needs at least one strategy")
    stored = {}
    for key, value in dict(blocks).items():
        i, j = (int(k) for k in key)
        if not (0 <= i < n and 0 <= j < n):
            raise ShapeMismatch(f"block index {(i, j)} out of range for {n} agents")
        if i == j:
            if np.any(np.asarray(value, dtype=float)):
                raise ShapeMismatch(f"diagonal block {(i, j)} must be zero")
            continue
        stored[(i, j)] = _as_matrix(value, f"block {(i, j)}", (dims[i], dims[j]))
    for i in range(n):
        for j in range(n):
            if i != j and (i, j) not in stored:
                stored[(i, j)] = _frozen(np.zeros((dims[i], dims[j])))

    if transforms is not None:
        if len(transforms) != n:
            raise ShapeMismatch(f"expected {n} transforms, got {len(transforms)}")
        checked = []
        for i, P in enumerate(transforms):
            P = _as_matrix(P, f"transform {i}", (dims[i], dims[i]))
            check_positive_definite(P, f"transform {i}")
            checked.append(P)
        transforms = tuple(checked)

    if linear_terms is not None:
        if len(linear_terms) != n:
            raise ShapeMismatch(f"expected {n} linear terms, got {len(linear_terms)}")
        terms = []
        for i, b in enumerate(linear_terms):
            b = _as_vector(b, f"linear term {i}", dims[i]).copy()
            b.setflags(write=False)
            terms.append(b)
        linear_terms = tuple(terms)

    return NetworkGame(n, dims, stored, transforms, linear_terms, dict(metadata or {}))


# -- classification ---------------------------------------------------------

@dataclass(frozen=True)
class GameClassification:
    is_zero_sum: bool
    is_coordination: bool
    is_pos_neg_definite: bool
    is_pos_pos_definite: bool
    witness_tolerance: float

    def to_dict(self):
        return {
            "is_zero_sum": self.is_zero_sum,
            "is_coordination": self.is_coordination,
            "is_pos_neg_definite": self.is_pos_neg_definite,
            "is_pos_pos_definite": self.is_pos_pos_definite,
            "witness_tolerance": self.witness_tolerance,
        }


def _pairwise(mats, n, sign, tol):
    for i in range(n):
        for j in range(i + 1, n):
            if np.max(np.abs(mats[(i, j)] - sign * mats[(j, i)].T), initial=0.0) > tol:
                return False
    return True


def classify_game(game, tol=CLASSIFY_TOL):
    """Entrywise zero-sum / coordination tests on the blocks and their factors."""
    n = game.n_agents
    zero_sum = _pairwise(game.blocks, n, -1.0, tol)
    coordination = _pairwise(game.blocks, n, 1.0, tol)
    pos_neg = pos_pos = False
    if game.transforms is not None:
        under = {(i, j): game.underlying_block(i, j)
                 for i in range(n) for j in range(n) if i != j}
        pos_neg = _pairwise(under, n, -1.0, tol)
        pos_pos = _pairwise(under, n, 1.0, tol)
    return GameClassification(zero_sum, coordination, pos_neg, pos_pos, tol)


# -- meta-game --------------------------------------------------------------

@dataclass(frozen=True)
class MetaGame:
    """Two meta-agents controlling all originals and all duplicates.

    ``a_bar`` stacks the underlying blocks with zero diagonal blocks,
    ``p_bar``/``q_bar`` are block-diagonal transforms and ``payoff`` is the
    stacked matrix of experienced blocks (equal to ``p_bar @ a_bar``).
    """

    a_bar: np.ndarray
    p_bar: np.ndarray
    q_bar: np.ndarray
    payoff: np.ndarray
    agent_offsets: tuple
    dims: tuple

    def block(self, i, j, which="payoff"):
        off = self.agent_offsets
        m = getattr(self, which)
        return m[off[i]:off[i + 1], off[j]:off[j + 1]]


def reduce_to_meta(game):
    off = game.offsets
    n = game.size
    payoff = np.zeros((n, n))
    a_bar = np.zeros((n, n))
    p_bar = np.zeros((n, n))
    for i in range(game.n_agents):
        rows = slice(off[i], off[i + 1])
        p_bar[rows, rows] = game.transform(i)
        for j in range(game.n_agents):
            if i == j:
                continue
            cols = slice(off[j], off[j + 1])
            payoff[rows, cols] = game.blocks[(i, j)]
            a_bar[rows, cols] = game.underlying_block(i, j)
    return MetaGame(_frozen(a_bar), _frozen(p_bar), _frozen(p_bar), _frozen(payoff),
                    off, game.dims)


# -- two-player bilinear view ------------------------------------------------

@dataclass(frozen=True)
class BilinearGame:
    """Two players: x receives ``payoff_x @ y``, y receives ``payoff_y @ x``.

    ``p``/``q`` are the players' positive-definite transforms, so the
    underlying matrices are ``p^-1 payoff_x`` and ``q^-1 payoff_y``.
    """

    payoff_x: np.ndarray
    payoff_y: np.ndarray
    p: np.ndarray
    q: np.ndarray
    label: str = "bilinear"

    @classmethod
    def from_matrices(cls, A, B, P=None, Q=None, label="bilinear"):
        A = _as_matrix(A, "A")
        B = _as_matrix(B, "B", (A.shape[1], A.shape[0]))
        P = _frozen(np.eye(A.shape[0])) if P is None else _as_matrix(P, "P", (A.shape[0],) * 2)
        Q = _frozen(np.eye(A.shape[1])) if Q is None else _as_matrix(Q, "Q", (A.shape[1],) * 2)
        check_positive_definite(P, "P")
        check_positive_definite(Q, "Q")
        return cls(A, B, P, Q, label)

    @property
    def dims(self):
        return self.payoff_x.shape

    @property
    def a(self):
        """Underlying x-side matrix (the ``A`` of the energy functions)."""
        return np.linalg.solve(self.p, self.payoff_x)

    @property
    def b_underlying(self):
        return np.linalg.solve(self.q, self.payoff_y)

    def kind(self, tol=CLASSIFY_TOL):
        """'pos_neg', 'pos_pos' or 'general' from the underlying matrices."""
        a, b = self.a, self.b_underlying
        if np.max(np.abs(b + a.T), initial=0.0) <= tol:
            return "pos_neg"
        if np.max(np.abs(b - a.T), initial=0.0) <= tol:
            return "pos_pos"
        return "general"


def as_bilinear(game):
    """View a 2-agent game or a meta-game as a :class:`BilinearGame`."""
    if isinstance(game, BilinearGame):
        return game
    if isinstance(game, MetaGame):
        return BilinearGame(game.payoff, game.payoff, game.p_bar, game.q_bar, "meta")
    if isinstance(game, NetworkGame):
        if game.n_agents != 2:
            raise DimensionMismatch(
                "only 2-agent games have a direct bilinear view; reduce to the meta-game"
            )
        if game.linear_terms is not None:
            raise DimensionMismatch("shift linear payouts away before alternating play")
        return BilinearGame(game.blocks[(0, 1)], game.blocks[(1, 0)],
                            _frozen(game.transform(0)), _frozen(game.transform(1)),
                            game.metadata.get("name", "2-agent"))
    raise TypeError(f"cannot view {type(game).__name__} as a bilinear game")


# -- linear payouts ----------------------------------------------------------

def shift_linear_payouts(game, x_star, tol=1e-9):
    """Drop the linear terms by re-centring strategies at ``x_star``.

    The returned game's gradient at ``z`` equals the original gradient at
    ``z + x_star``.
    """
    xs = game.split(np.concatenate([np.ravel(v) for v in x_star]))
    if game.linear_terms is None:
        return game
    stripped = NetworkGame(game.n_agents, game.dims, game.blocks, game.transforms,
                           None, game.metadata)
    pulls = stripped.gradients(xs)
    resid = max(float(np.max(np.abs(g - b), initial=0.0))
                for g, b in zip(pulls, game.linear_terms))
    scale = 1.0 + max(float(np.max(np.abs(b), initial=0.0)) for b in game.linear_terms)
    if resid > tol * scale:
        raise NotAnEquilibrium(f"x_star leaves residual {resid:.3g} in the linear terms", resid)
    meta = dict(game.metadata)
    meta["shifted_by"] = [v.tolist() for v in xs]
    return NetworkGame(game.n_agents, game.dims, game.blocks, game.transforms, None, meta)


# -- norms ---------------------------------------------------------------------

def weighted_norm(x, W):
    """sqrt(<x, W x>) for a symmetric positive-definite ``W``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    check_positive_definite(W, "W")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != W.shape[0]:
        raise DimensionMismatch(f"x has length {x.size}, W is {W.shape}")
    return math.sqrt(max(float(x @ W @ x), 0.0))


@dataclass(frozen=True)
class SpectralNormResult:
    value: float
    iterations: int
    converged: bool
    restarts: int = 0


def _fallback_start(n, attempt):
    # attempt 1: alternating ramp; later attempts: unit basis vectors in turn
    if attempt == 1:
        v = np.array([(-1.0) ** k * (k + 1) for k in range(n)])
    else:
        v = np.zeros(n)
        v[(attempt - 2) % n] = 1.0
    return v / np.linalg.norm(v)


def spectral_norm(M, tol=POWER_TOL, max_iter=POWER_MAX_ITER, full_output=False):
    """Largest singular value by power iteration on ``M^T M``.

    Starts from the normalised all-ones vector. If an iterate collapses
    (``M^T M v`` vanishes) the iteration restarts from an alternating ramp
    ``(+1, -2, +3, ...)`` and then from unit basis vectors in turn. Stops when
    the extrapolated remaining change of the estimate ``||M v||`` (last change
    scaled by its geometric contraction ratio) falls below ``tol`` relative.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ShapeMismatch("spectral_norm expects a matrix")
    if not np.all(np.isfinite(M)):
        raise NonFiniteEntry("matrix contains non-finite entries")
    if M.size == 0 or not np.any(M):
        res = SpectralNormResult(0.0, 0, True)
        return res if full_output else res.value
    n = M.shape[1]
    v = np.full(n, 1.0 / math.sqrt(n))
    est = prev = prev_change = 0.0
    restarts = 0
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        w = M @ v
        u = M.T @ w
        nu = float(np.linalg.norm(u))
        if nu <= 1e-300:
            restarts += 1
            if restarts > n + 1:
                break
            v = _fallback_start(n, restarts)
            continue
        est = float(np.linalg.norm(w))
        v = u / nu
        change = abs(est - prev)
        if prev > 0.0:
            # geometric tail of the remaining changes, from their contraction ratio
            rho = change / prev_change if prev_change > 0.0 else 0.0
            tail = change * max(1.0, rho / (1.0 - rho)) if rho < 1.0 else math.inf
            if change == 0.0 or tail <= tol * est:
                converged = True
                break
        prev_change = change if prev > 0.0 else 0.0
        prev = est
    # the final unit vector gives the tightest lower estimate
    est = max(est, float(np.linalg.norm(M @ v)))
    res = SpectralNormResult(est, it, converged, restarts)
    if full_output:
        return res
    if not converged:
        raise NoConvergence(f"power iteration did not converge in {max_iter} steps", est, it)
    return est


@dataclass(frozen=True)
class RateThreshold:
    """Largest admissible rate product ``2/||A||`` and the cheap uniform bound."""

    spectral: float
    cheap: float | None
    norm: float


def learning_rate_threshold(game):
    """Return ``2/||A_bar||`` (``inf`` for the zero game) plus ``2/(k(N-1))``."""
    if isinstance(game, NetworkGame):
        a = reduce_to_meta(game).a_bar
        dims = set(game.dims)
        cheap = 2.0 / (game.dims[0] * (game.n_agents - 1)) if len(dims) == 1 else None
    elif isinstance(game, MetaGame):
        a = game.a_bar
        cheap = None
        if len(set(game.dims)) == 1:
            cheap = 2.0 / (game.dims[0] * (len(game.dims) - 1))
    else:
        a = as_bilinear(game).a
        cheap = None
    norm = spectral_norm(a)
    spectral = math.inf if norm == 0.0 else 2.0 / norm
    return RateThreshold(spectral, cheap, norm)


def rate_product(p, eta, q, gamma):
    """``||P^1/2 D_eta^1/2|| * ||Q^1/2 D_gamma^1/2||``, the rate-condition left side."""
    left = np.linalg.norm(sqrt_psd(p) @ np.diag(np.sqrt(eta)), 2)
    right = np.linalg.norm(sqrt_psd(q) @ np.diag(np.sqrt(gamma)), 2)
    return float(left * right)


def nash_residual(game, x):
    """Euclidean norm of the stacked per-agent gradients at profile ``x``.

    ``x`` is a stacked vector or a sequence of per-agent vectors.
    """
    if isinstance(x, np.ndarray) or (len(x) and np.isscalar(x[0])):
        xs = game.split(x)
    else:
        xs = [np.asarray(v, dtype=float).reshape(-1) for v in x]
        if len(xs) != game.n_agents or any(v.size != d for v, d in zip(xs, game.dims)):
            raise DimensionMismatch("profile does not match the game's dimensions")
    g = np.concatenate(game.gradients(xs))
    return float(np.linalg.norm(g))


# -- JSON game files -----------------------------------------------------------

def game_to_dict(game):
    out = {
        "n_agents": game.n_agents,
        "dims": list(game.dims),
        "blocks": {
            f"{i + 1},{j + 1}": game.blocks[(i, j)].tolist()
            for i in range(game.n_agents) for j in range(game.n_agents) if i != j
        },
    }
    if game.transforms is not None:
        out["transforms"] = [P.tolist() for P in game.transforms]
    if game.linear_terms is not None:
        out["linear_terms"] = [b.tolist() for b in game.linear_terms]
    if "provenance" in game.metadata:
        out["provenance"] = game.metadata["provenance"]
    extra = {k: v for k, v in game.metadata.items() if k != "provenance"}
    if extra:
        out["metadata"] = extra
    return out


def game_from_dict(data):
    n = int(data["n_agents"])
    dims = [int(d) for d in data["dims"]]
    if len(dims) != n:
        raise ShapeMismatch(f"n_agents={n} but {len(dims)} dims given")
    blocks = {}
    for key, value in data.get("blocks", {}).items():
        i, j = (int(p) - 1 for p in key.split(","))
        blocks[(i, j)] = value
    meta = dict(data.get("metadata", {}))
    if "provenance" in data:
        meta["provenance"] = data["provenance"]
    return make_network_game(blocks, dims, data.get("transforms"), data.get("linear_terms"), meta)


def save_game(game, path):
    Path(path).write_text(json.dumps(game_to_dict(game), indent=2) + "\n")


def load_game(path):
    return game_from_dict(json.loads(Path(path).read_text()))


def stack(vectors: Sequence) -> np.ndarray:
    return np.concatenate([np.asarray(v, dtype=float).reshape(-1) for v in vectors])
