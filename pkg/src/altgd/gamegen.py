"""Seeded random zero-sum network games and the named counterexample games.

Random numbers come from xorshift64* (shifts 12, 25, 27; multiplier
0x2545F4914F6CDD1D) whose 64-bit state is the first output of splitmix64
applied to the user seed. A unit value is ``(out >> 11) * 2**-53`` and a
draw from (-1, 1) is ``2*u - 1``. Everything is plain integer arithmetic
so the stream is identical on every platform.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .dynamics import JointState, LearningRates
from .errors import UnknownName
from .game import make_network_game

MASK64 = (1 << 64) - 1
GENERATOR_NAME = "xorshift64*/splitmix64"


def splitmix64(seed):
    z = (seed + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Xorshift64Star:
    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self.state = splitmix64(self.seed) or 0x9E3779B97F4A7C15

    def next_u64(self):
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def unit(self):
        return (self.next_u64() >> 11) * 2.0 ** -53

    def symmetric(self):
        """Uniform draw from (-1, 1)."""
        return 2.0 * self.unit() - 1.0

    def symmetric_array(self, shape):
        n = math.prod(shape)
        return np.array([self.symmetric() for _ in range(n)]).reshape(shape)


@dataclass(frozen=True)
class GeneratorConfig:
    n_agents: int
    k: int
    seed: int
    distribution: str = "uniform(-1,1)"

    def __post_init__(self):
        if self.n_agents < 2 or self.k < 1:
            raise ValueError("need n_agents >= 2 and k >= 1")
        if self.distribution != "uniform(-1,1)":
            raise ValueError(f"unsupported distribution {self.distribution!r}")


def _zero_sum_from_stream(rng, config):
    n, k = config.n_agents, config.k
    blocks = {}
    for i in range(n):
        for j in range(i + 1, n):
            upper = rng.symmetric_array((k, k))
            blocks[(i, j)] = upper
            blocks[(j, i)] = -upper.T
    meta = {"seed": config.seed, "generator": GENERATOR_NAME,
            "distribution": config.distribution,
            "provenance": "random zero-sum network game"}
    return make_network_game(blocks, [k] * n, metadata=meta)


def random_zero_sum_network(config):
    """Upper blocks drawn row-major for (i, j) in lexicographic order; lower blocks negated transposes."""
    return _zero_sum_from_stream(Xorshift64Star(config.seed), config)


def random_instance(config):
    """Game plus an initial profile drawn from (-1, 1), continuing the game's stream."""
    rng = Xorshift64Star(config.seed)
    game = _zero_sum_from_stream(rng, config)
    x0 = JointState(tuple(rng.symmetric_array((config.k,)) for _ in range(config.n_agents)))
    return game, x0


def dummy_agent_extension(game, k_dummies):
    """Append ``k_dummies`` one-strategy agents whose blocks are all zero."""
    if k_dummies < 0:
        raise ValueError("k_dummies must be non-negative")
    if k_dummies == 0:
        return game
    dims = list(game.dims) + [1] * k_dummies
    blocks = {key: np.array(v) for key, v in game.blocks.items()}
    transforms = None if game.transforms is None else \
        list(game.transforms) + [np.eye(1)] * k_dummies
    linear = None if game.linear_terms is None else \
        list(game.linear_terms) + [np.zeros(1)] * k_dummies
    meta = dict(game.metadata, dummy_agents=k_dummies)
    return make_network_game(blocks, dims, transforms, linear, meta)


def lemma_bounds_construction(n_agents=5, k=5):
    """All-ones blocks above the diagonal, their negatives below."""
    ones = np.ones((k, k))
    blocks = {}
    for i in range(n_agents):
        for j in range(n_agents):
            if i < j:
                blocks[(i, j)] = ones
            elif i > j:
                blocks[(i, j)] = -ones
    meta = {"provenance": "signed all-ones construction attaining a large spectral norm",
            "n_agents": n_agents, "k": k}
    return make_network_game(blocks, [k] * n_agents, metadata=meta)


@dataclass(frozen=True)
class CanonicalInstance:
    name: str
    game: object
    rates: LearningRates
    init: JointState
    provenance: str
    algorithm: str


def _scalar_pair(a, b, name, provenance):
    return make_network_game({(0, 1): [[a]], (1, 0): [[b]]}, (1, 1),
                             metadata={"name": name, "provenance": provenance})


def _no_nash(p, a, name, provenance):
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    q = np.eye(2)
    blocks = {(0, 1): p @ a, (1, 0): -q @ a.T}
    return make_network_game(blocks, (2, 2), transforms=[p, q],
                             metadata={"name": name, "provenance": provenance})


def _pair_rates(eta):
    return LearningRates(([eta], [eta]))


def _pair_init(x, y):
    return JointState((x, y))


CANONICAL_NAMES = (
    "matching_pennies_scalar", "coordination_unit", "divergence_instance",
    "chaos_instance", "round_robin_cycle", "no_nash_pair_first",
    "no_nash_pair_second", "lemma_bounds_construction",
)


def parse_canonical(name):
    """Split ``"lemma_bounds_construction(6,3)"`` into the base name and integer arguments."""
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\(\s*(\d+)\s*,\s*(\d+)\s*\))?\s*", name)
    if not m or m.group(1) not in CANONICAL_NAMES:
        raise UnknownName(name)
    args = () if m.group(2) is None else (int(m.group(2)), int(m.group(3)))
    if args and m.group(1) != "lemma_bounds_construction":
        raise UnknownName(name)
    return m.group(1), args


def canonical(name, n_agents=None, k=None):
    """Named game with its recommended rates and starting profile."""
    base, args = parse_canonical(name)
    if base == "matching_pennies_scalar":
        prov = "scalar matching pennies, alternating play with bounded orbit"
        return CanonicalInstance(base, _scalar_pair(1.0, -1.0, base, prov), _pair_rates(0.5),
                                 _pair_init([1.0], [0.0]), prov, "2altgd")
    if base == "coordination_unit":
        prov = "scalar coordination game"
        return CanonicalInstance(base, _scalar_pair(1.0, 1.0, base, prov), _pair_rates(0.5),
                                 _pair_init([1.0], [0.0]), prov, "2altgd")
    if base == "divergence_instance":
        prov = "matching pennies at the boundary rate 2/||A||, diverging linearly"
        return CanonicalInstance(base, _scalar_pair(1.0, -1.0, base, prov), _pair_rates(2.0),
                                 _pair_init([0.0], [-2.0]), prov, "2altgd")
    if base == "chaos_instance":
        prov = "scalar coordination game at unit rate; image of [-1,1]^2 stretches like Fibonacci"
        return CanonicalInstance(base, _scalar_pair(1.0, 1.0, base, prov), _pair_rates(1.0),
                                 _pair_init([1.0], [1.0]), prov, "2altgd")
    if base == "round_robin_cycle":
        prov = "matching pennies under round-robin play, period 6"
        return CanonicalInstance(base, _scalar_pair(1.0, -1.0, base, prov), _pair_rates(1.0),
                                 _pair_init([1.0], [1.0]), prov, "roundgd")
    if base == "no_nash_pair_first":
        prov = "transformed pair sharing agent 1's payoff with no_nash_pair_second"
        g = _no_nash(np.eye(2), [[1.0, -1.0], [-1.0, 1.0]], base, prov)
        return CanonicalInstance(base, g, LearningRates(([0.5, 0.5], [0.5, 0.5])),
                                 _pair_init([1.0, 0.0], [0.0, 1.0]), prov, "2altgd")
    if base == "no_nash_pair_second":
        prov = "transformed pair sharing agent 1's payoff with no_nash_pair_first"
        g = _no_nash(np.diag([2.0, 1.0]), [[0.5, -0.5], [-1.0, 1.0]], base, prov)
        return CanonicalInstance(base, g, LearningRates(([0.5, 0.5], [0.5, 0.5])),
                                 _pair_init([1.0, 0.0], [0.0, 1.0]), prov, "2altgd")
    n_agents, k = args or (n_agents or 5, k or 5)
    g = lemma_bounds_construction(n_agents, k)
    eta = 1.0 / (2 * k * (n_agents - 1))
    rates = LearningRates.uniform(g.dims, eta)
    init = JointState(tuple(np.ones(k) for _ in range(n_agents)))
    return CanonicalInstance(f"lemma_bounds_construction({n_agents},{k})", g, rates, init,
                             g.metadata["provenance"], "altgd")
