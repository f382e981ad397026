"""Paired comparison of AltGD against both optimistic variants on random zero-sum games.

Each instance is one seeded game plus one seeded starting profile. All three
algorithms start from that profile (duplicates start equal to the
originals) and the reported distance is the Nash residual of the
time-averaged strategy over ``t = 0 .. T-1``: the duplicates' average for
AltGD, the strategies' average for the optimistic methods.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import betaincinv

from .dynamics import Budget, JointState, LearningRates, run
from .errors import DivergenceDetected, InsufficientSamples
from .gamegen import GeneratorConfig, random_instance
from .game import reduce_to_meta

RESULT_COLUMNS = ["N", "k", "seed", "budget_mode", "budget", "d_alt", "d_opt", "d_opt_cached",
                  "ratio_opt", "ratio_cached", "flags"]


@dataclass(frozen=True)
class ExperimentConfig:
    agents: tuple = (5, 10, 20)
    strategies: tuple = (5, 10, 20)
    games_per_cell: int = 30
    budget_mode: str = "iterations"
    budget: float = 100_000
    alt_multiplier: float = 4.0
    opt_multiplier: float = 1.0
    multipliers: tuple = (1.0, 2.0, 4.0)
    level: float = 0.95
    seed_base: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(int(n) for n in self.agents))
        object.__setattr__(self, "strategies", tuple(int(k) for k in self.strategies))
        object.__setattr__(self, "multipliers", tuple(float(m) for m in self.multipliers))
        if self.games_per_cell < 2:
            raise ValueError("games_per_cell must be at least 2 for intervals")
        if any(n < 2 for n in self.agents) or any(k < 1 for k in self.strategies):
            raise ValueError("need at least 2 agents and 1 strategy per cell")
        if any(m <= 0 or m > 4 for m in self.multipliers + (self.alt_multiplier,)):
            raise ValueError("rate multipliers must lie in (0, 4]")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        Budget(self.budget_mode, self.budget)

    def to_dict(self):
        d = asdict(self)
        for key in ("agents", "strategies", "multipliers"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def base_rate(n_agents, k):
    """The normalised rate ``1 / (2 k (N - 1))``."""
    return 1.0 / (2 * k * (n_agents - 1))


def instance_seed(seed_base, n_agents, k, index):
    return seed_base * 10 ** 9 + n_agents * 10 ** 6 + k * 10 ** 3 + index


@dataclass
class InstanceRecord:
    n_agents: int
    k: int
    seed: int
    budget_mode: str
    budget: float
    d_alt: float
    d_opt: float
    d_opt_cached: float
    d_alt_x: float
    iterations: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def ratio_opt(self):
        return self.d_opt / self.d_alt if self.d_alt > 0 else None

    @property
    def ratio_cached(self):
        return self.d_opt_cached / self.d_alt if self.d_alt > 0 else None


def _residual(payoff, total, T):
    return float(np.linalg.norm(payoff @ total)) / T if T else 0.0


def _run_alt(game, x0, eta, budget, payoff, meta):
    rates = LearningRates.uniform(game.dims, eta)
    tr = run(game, "altgd", JointState(x0.x, x0.x), rates, budget, record_every=None,
             metadata=meta)
    T = tr.iterations
    return _residual(payoff, tr.sum_y, T), _residual(payoff, tr.sum_x, T), T


def _run_opt(game, x0, eta, budget, payoff, algorithm, meta):
    rates = LearningRates.uniform(game.dims, eta)
    tr = run(game, algorithm, JointState(x0.x), rates, budget, record_every=None, metadata=meta)
    return _residual(payoff, tr.sum_x, tr.iterations), tr.iterations


def run_instance(game, x0, budget, alt_eta, opt_eta, seed=None, skip_opt=False):
    """Run the three algorithms back to back on one game from one profile."""
    meta = {"seed": seed, "n_agents": game.n_agents, "dims": list(game.dims)}
    payoff = reduce_to_meta(game).payoff
    try:
        d_alt, d_alt_x, t_alt = _run_alt(game, x0, alt_eta, budget, payoff, meta)
        if skip_opt:
            d_opt = d_cached = math.nan
            t_opt = t_cached = 0
        else:
            d_opt, t_opt = _run_opt(game, x0, opt_eta, budget, payoff, "optgd", meta)
            d_cached, t_cached = _run_opt(game, x0, opt_eta, budget, payoff, "optgd_cached",
                                          meta)
    except DivergenceDetected as exc:
        exc.metadata.update(meta)
        raise
    flags = ["zero_residual"] if d_alt == 0 else []
    return InstanceRecord(game.n_agents, game.dims[0], seed, budget.mode, budget.limit,
                          d_alt, d_opt, d_cached, d_alt_x,
                          {"altgd": t_alt, "optgd": t_opt, "optgd_cached": t_cached}, flags)


def _cell_job(args):
    config, n_agents, k, index, alt_mult = args
    seed = instance_seed(config.seed_base, n_agents, k, index)
    game, x0 = random_instance(GeneratorConfig(n_agents, k, seed))
    eta_bar = base_rate(n_agents, k)
    budget = Budget(config.budget_mode, config.budget)
    return run_instance(game, x0, budget, alt_mult * eta_bar,
                        config.opt_multiplier * eta_bar, seed)


def _map(jobs, workers, mode):
    if workers > 1 and mode != "seconds":
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_cell_job, jobs))
    # wall-clock runs stay on this process one after another
    return [_cell_job(j) for j in jobs]


@dataclass
class PairedResults:
    records: list
    config: ExperimentConfig
    alt_multiplier: float

    def ratios(self, which="opt", cell=None):
        out = []
        for r in self.records:
            if cell is not None and (r.n_agents, r.k) != cell:
                continue
            v = r.ratio_opt if which == "opt" else r.ratio_cached
            if v is not None:
                out.append(v)
        return out

    @property
    def zero_residual_count(self):
        return sum("zero_residual" in r.flags for r in self.records)

    def cells(self):
        seen = []
        for r in self.records:
            if (r.n_agents, r.k) not in seen:
                seen.append((r.n_agents, r.k))
        return seen

    def alt_wins(self, which="opt", cell=None):
        wins = 0
        for r in self.records:
            if cell is not None and (r.n_agents, r.k) != cell:
                continue
            other = r.d_opt if which == "opt" else r.d_opt_cached
            wins += r.d_alt < other
        return wins

    def interval_row(self, which, cell=None):
        samples = self.ratios(which, cell)
        lo, hi = confidence_interval(samples, self.config.level)
        return {"comparison": which, "N": None if cell is None else cell[0],
                "k": None if cell is None else cell[1], "n": len(samples),
                "mean": float(np.mean(samples)), "lo": lo, "hi": hi,
                "alt_wins": self.alt_wins(which, cell)}

    def summary(self):
        rows = []
        for cell in self.cells():
            for which in ("opt", "cached"):
                rows.append(self.interval_row(which, cell))
        overall = [self.interval_row(w) for w in ("opt", "cached")]
        return {"config": self.config.to_dict(), "alt_multiplier": self.alt_multiplier,
                "level": self.config.level, "cells": rows, "overall": overall,
                "zero_residual_instances": self.zero_residual_count,
                "instances": len(self.records)}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        fmt = lambda v: "" if v is None else f"{v:.17g}"
        for r in self.records:
            w.writerow([r.n_agents, r.k, r.seed, r.budget_mode, fmt(r.budget), fmt(r.d_alt),
                        fmt(r.d_opt), fmt(r.d_opt_cached), fmt(r.ratio_opt),
                        fmt(r.ratio_cached), ";".join(r.flags)])
        return buf.getvalue()


def run_comparison(config, alt_multiplier=None):
    """Every (N, k) cell of the grid, ``games_per_cell`` seeded instances each."""
    mult = config.alt_multiplier if alt_multiplier is None else alt_multiplier
    jobs = [(config, n, k, i, mult)
            for n in config.agents for k in config.strategies
            for i in range(config.games_per_cell)]
    return PairedResults(_map(jobs, config.workers, config.budget_mode), config, mult)


def t_quantile(p, df):
    """Quantile of Student's t with ``df`` degrees of freedom for ``p`` in (0.5, 1).

    Uses ``P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)`` inverted with the
    regularised incomplete beta inverse.
    """
    if not 0.5 < p < 1:
        raise ValueError("p must lie in (0.5, 1)")
    x = float(betaincinv(df / 2.0, 0.5, 2.0 * (1.0 - p)))
    return math.sqrt(df * (1.0 / x - 1.0))


def confidence_interval(samples, level=0.95):
    """Two-sided t interval for the mean."""
    a = np.asarray(samples, dtype=float)
    n = a.size
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    mean = float(a.mean())
    stderr = float(a.std(ddof=1)) / math.sqrt(n)
    if stderr == 0.0:
        return mean, mean
    half = t_quantile((1.0 + level) / 2.0, n - 1) * stderr
    return mean - half, mean + half


@dataclass
class SweepResult:
    rows: list
    results: dict

    def to_dict(self):
        return {"rows": self.rows}


def rate_sweep(config):
    """AltGD at each multiplier of the base rate against the optimistic runs at ``opt_multiplier``.

    The optimistic runs do not depend on the AltGD rate, so they are
    computed once per instance and shared across multipliers.
    """
    base = run_comparison(replace(config, alt_multiplier=config.multipliers[-1]))
    results = {config.multipliers[-1]: base}
    for mult in config.multipliers[:-1]:
        recs = []
        for r in base.records:
            game, x0 = random_instance(GeneratorConfig(r.n_agents, r.k, r.seed))
            eta = mult * base_rate(r.n_agents, r.k)
            alt = run_instance(game, x0, Budget(config.budget_mode, config.budget), eta,
                               None, r.seed, skip_opt=True)
            recs.append(replace(r, d_alt=alt.d_alt, d_alt_x=alt.d_alt_x, flags=alt.flags,
                                iterations=dict(r.iterations, altgd=alt.iterations["altgd"])))
        results[mult] = PairedResults(recs, config, mult)
    rows = []
    for mult in config.multipliers:
        for which in ("opt", "cached"):
            row = results[mult].interval_row(which)
            row["multiplier"] = mult
            rows.append(row)
    return SweepResult(rows, results)
