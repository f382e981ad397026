"""Command-line front end: ``altgd <verb> [options]``.

Exit status is 0 on success, 2 on a usage error and 1 when a run fails
(for example a strategy leaving the divergence guard). Output goes to
``--out``, else to ``$ALTGD_OUTPUT_DIR/<verb>.<format>`` when that variable
is set, else to standard output.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .dynamics import ALGORITHMS, Budget, JointState, LearningRates, run, trajectory_csv
from .errors import AltGDError, DivergenceDetected, UnknownName
from .experiments import ExperimentConfig, RESULT_COLUMNS, base_rate, rate_sweep, run_comparison
from .game import classify_game, learning_rate_threshold, load_game, \
    reduce_to_meta, spectral_norm
from .gamegen import GeneratorConfig, Xorshift64Star, canonical, dummy_agent_extension, \
    parse_canonical, random_instance

ENV_OUTPUT_DIR = "ALTGD_OUTPUT_DIR"

VERBS = {
    "simulate": "run one algorithm and write the trajectory (t, phase, agent, component, value)",
    "energy": "track the conserved energy of an alternating run and its drift",
    "regret": "simulated regret and utility of the first mover next to their closed forms",
    "converge": "time-average Nash residual at doubling horizons, log-log slope and c/T bound",
    "recurrence": "first return of the orbit within each eps of its starting point",
    "volume": "determinants of the two shear Jacobians of one alternating round",
    "chaos": "integer corners, area and diameter of the unit-rate coordination image of [-1,1]^2",
    "counterexample": "run a named counterexample game under a tight escape guard",
    "specnorm": "spectral norm of the stacked game matrix and the admissible rate thresholds",
    "compare": "paired AltGD vs optimistic GD residuals on seeded random zero-sum games",
    "sweep": "paired comparison repeated for each AltGD rate multiplier",
}
SIM_VERBS = ("simulate", "energy", "regret", "converge", "recurrence", "counterexample",
             "compare", "sweep")


class UsageError(Exception):
    pass


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--game", help="canonical name, random(N,k) or a game JSON file")
    g.add_argument("--algo", choices=ALGORITHMS, help="update rule (default: the game's own)")
    g.add_argument("--rates", help="'eta' or 'eta,gamma' applied to every strategy")
    budget = g.add_mutually_exclusive_group()
    budget.add_argument("--iters", type=int, help="iteration budget")
    budget.add_argument("--seconds", type=float, help="wall-clock budget per run")
    g.add_argument("--seed", type=int, default=0, help="seed for random games and starts")
    g.add_argument("--out", help="output file (parent directory must exist)")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--plot", action="store_true",
                   help="also write a PNG next to the output (needs matplotlib)")

    epilog = "verbs:\n" + "\n".join(f"  {v:<15}{d}" for v, d in VERBS.items())
    epilog += f"\n\ndefault output directory: ${ENV_OUTPUT_DIR}"
    parser = argparse.ArgumentParser(
        prog="altgd", description="Alternating gradient descent laboratory for network games.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")
    p = {v: sub.add_parser(v, parents=[common], help=d, description=d) for v, d in VERBS.items()}

    p["simulate"].add_argument("--record-every", type=int, default=1)
    p["simulate"].add_argument("--phases", choices=("full", "all"), default="full",
                               help="write full steps only, or half steps too")
    p["energy"].add_argument("--summation", choices=("auto", "exact", "fast"), default="auto")
    p["regret"].add_argument("--fixed", help="comparator strategy, comma separated (default 0)")
    p["regret"].add_argument("--convention", choices=("after_x", "after_y"), default="after_x")
    p["regret"].add_argument("--agent", type=int, default=1, help="1-based agent index")
    p["converge"].add_argument("--first-horizon", type=int, default=16)
    p["recurrence"].add_argument("--eps", default="0.1,0.01,0.001")
    p["chaos"].add_argument("--t", type=int, required=True, dest="steps")
    p["counterexample"].add_argument("--name", required=True)
    p["counterexample"].add_argument("--guard", type=float,
                                     help="escape radius (default 100 x max(1, |start|))")
    p["counterexample"].add_argument("--dummies", type=int, default=0,
                                     help="dummy agents for round_robin_cycle regret")
    p["specnorm"].add_argument("--N", type=int, default=5, dest="n_agents")
    p["specnorm"].add_argument("--k", type=int, default=5)
    p["specnorm"].add_argument("--tol", type=float, default=1e-10)
    for v in ("compare", "sweep"):
        p[v].add_argument("--config", help="experiment config JSON (flags below override it)")
        p[v].add_argument("--agents", help="agent counts, e.g. 5,10,20")
        p[v].add_argument("--strategies", help="strategy counts, e.g. 5,10,20")
        p[v].add_argument("--games", type=int, help="games per cell")
        p[v].add_argument("--multipliers", help="AltGD rate multipliers, e.g. 1,2,4")
        p[v].add_argument("--level", type=float, help="interval confidence level")
        p[v].add_argument("--workers", type=int, help="worker processes")
    return parser


# -- resolution of games, rates and budgets ------------------------------------------

def _resolve_game(ns, default="matching_pennies_scalar"):
    name = ns.game or default
    try:
        base, _ = parse_canonical(name)
    except UnknownName:
        base = None
    if base is not None:
        if Path(name).exists():
            warnings.warn(f"{name!r} names both a canonical game and a file; using the canonical game")
        inst = canonical(name)
        return {"name": inst.name, "game": inst.game, "init": inst.init, "rates": inst.rates,
                "algo": inst.algorithm, "source": "canonical"}
    if name.startswith("random(") and name.endswith(")"):
        try:
            n_agents, k = _ints(name[len("random("):-1])
        except ValueError as exc:
            raise UsageError(f"bad random game spec {name!r}; use random(N,k)") from exc
        game, x0 = random_instance(GeneratorConfig(n_agents, k, ns.seed))
        rates = LearningRates.uniform(game.dims, 4 * base_rate(n_agents, k))
        return {"name": name, "game": game, "init": x0, "rates": rates, "algo": "altgd",
                "source": "random"}
    path = Path(name)
    if not path.exists():
        raise UsageError(f"unknown game {name!r}: not a canonical name, random(N,k) or a file")
    game = load_game(path)
    rng = Xorshift64Star(ns.seed)
    x0 = JointState(tuple(rng.symmetric_array((d,)) for d in game.dims))
    rates = LearningRates.uniform(game.dims, base_rate(game.n_agents, max(game.dims)))
    return {"name": str(path), "game": game, "init": x0, "rates": rates, "algo": "altgd",
            "source": "file"}


def _apply_overrides(ns, spec):
    algo = ns.algo or spec["algo"]
    game = spec["game"]
    rates = spec["rates"]
    if ns.rates:
        vals = _floats(ns.rates)
        if len(vals) not in (1, 2) or any(v <= 0 for v in vals):
            raise UsageError("--rates takes one or two positive numbers")
        eta, gamma = vals[0], vals[-1]
        if algo == "2altgd" and game.n_agents == 2:
            rates = LearningRates((np.full(game.dims[0], eta), np.full(game.dims[1], gamma)))
        else:
            rates = LearningRates.uniform(game.dims, eta, gamma if len(vals) == 2 else None)
    init = spec["init"]
    if algo == "altgd" and init.y is None:
        init = JointState(init.x, init.x)
    if algo != "altgd" and init.y is not None and algo != "2altgd":
        init = JointState(init.x)
    spec = dict(spec, algo=algo, rates=rates, init=init)
    return spec


def _budget(ns, required=True):
    if ns.iters is not None:
        if ns.iters <= 0:
            raise UsageError("--iters must be positive")
        return Budget("iterations", ns.iters)
    if ns.seconds is not None:
        if ns.seconds <= 0:
            raise UsageError("--seconds must be positive")
        return Budget("seconds", ns.seconds)
    if required:
        raise UsageError("give exactly one of --iters or --seconds")
    return None


def _destination(ns):
    if ns.out:
        out = Path(ns.out)
        if not out.parent.exists():
            raise UsageError(f"output directory {out.parent} does not exist")
        return out
    import os
    base = os.environ.get(ENV_OUTPUT_DIR)
    if base:
        d = Path(base)
        if not d.is_dir():
            raise UsageError(f"${ENV_OUTPUT_DIR}={base} is not a directory")
        return d / f"{ns.verb}.{ns.format}"
    return None


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    return value


def _config_echo(ns, extra=None):
    echo = {k: v for k, v in vars(ns).items() if k != "func"}
    echo.update(extra or {})
    return _jsonable(echo)


def _rates_echo(rates):
    return rates.to_dict()


# -- output --------------------------------------------------------------------

class Output:
    def __init__(self, ns, dest):
        self.ns, self.dest = ns, dest

    def write(self, payload, csv_text, config, sidecar_extra=None):
        if self.ns.format == "json":
            text = json.dumps(_jsonable(dict(verb=self.ns.verb, config=config, **payload)),
                              indent=2) + "\n"
        else:
            text = csv_text
        if self.dest is None:
            sys.stdout.write(text)
            return
        self.dest.write_text(text)
        if self.ns.format == "csv":
            meta = dict(verb=self.ns.verb, config=config, **(sidecar_extra or {}))
            Path(str(self.dest) + ".meta.json").write_text(
                json.dumps(_jsonable(meta), indent=2) + "\n")

    def plot_path(self):
        if self.dest is None:
            raise UsageError("--plot needs --out or $" + ENV_OUTPUT_DIR)
        return self.dest.with_suffix(".png")


def _rows_csv(header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join("" if v is None else (f"{v:.17g}" if isinstance(v, float) else str(v))
                              for v in r))
    return "\n".join(lines) + "\n"


# -- verbs ---------------------------------------------------------------------

def _simulation(ns, record_every=1, horizons=None, guard=None):
    spec = _apply_overrides(ns, _resolve_game(ns))
    budget = _budget(ns)
    kwargs = {} if guard is None else {"guard": guard}
    traj = run(spec["game"], spec["algo"], spec["init"], spec["rates"], budget,
               record_every=record_every, horizons=horizons, **kwargs)
    echo = {"resolved_game": spec["name"], "resolved_algo": spec["algo"],
            "resolved_rates": _rates_echo(spec["rates"]), "budget": budget.to_dict(),
            "initial_state": spec["init"].to_dict()}
    return spec, traj, echo


def _trajectory_payload(traj, include_half):
    out = {"algorithm": traj.algorithm, "iterations": traj.iterations,
           "times": traj.times, "states": [s.to_dict() for s in traj.states]}
    if include_half:
        out["half_times"] = traj.half_times
        out["half_states"] = [s.to_dict() for s in traj.half_states]
    return out


def _plot_trajectory(path, traj):
    from . import plotting
    xs = np.array([s.stacked_x for s in traj.states])
    if traj.algorithm == "2altgd" and xs.shape[1] == 1:
        ys = np.array([s.stacked_y for s in traj.states])
        return plotting.phase_plot(path, xs[:, 0], ys[:, 0], f"{traj.algorithm} orbit")
    series = {f"x[{i + 1}]": xs[:, i] for i in range(min(xs.shape[1], 8))}
    return plotting.line_plot(path, traj.times, series, f"{traj.algorithm} strategies")


def cmd_simulate(ns, out):
    _, traj, echo = _simulation(ns, record_every=ns.record_every)
    half = ns.phases == "all"
    config = _config_echo(ns, echo)
    out.write({"trajectory": _trajectory_payload(traj, half)}, trajectory_csv(traj, half), config)
    if ns.plot:
        _plot_trajectory(out.plot_path(), traj)


def cmd_energy(ns, out):
    spec, traj, echo = _simulation(ns)
    report = diag.energy_report(traj, ns.summation)
    config = _config_echo(ns, echo)
    out.write({"energy": report.to_dict()}, report.to_csv(), config,
              {"max_relative_drift": report.max_relative_drift, "initial": report.initial})
    if ns.plot:
        from . import plotting
        plotting.line_plot(out.plot_path(), report.times,
                           {"E_t - E_0": [v - report.initial for v in report.series]},
                           "energy drift", ylabel="E_t - E_0")


def cmd_regret(ns, out):
    spec, traj, echo = _simulation(ns)
    agent = ns.agent - 1
    fixed = None if ns.fixed is None else _floats(ns.fixed)
    rep = diag.regret_report(traj, agent, fixed, ns.convention)
    util = diag.cumulative_utility(traj, agent)
    series = diag.regret_series(traj, agent, fixed)
    config = _config_echo(ns, echo)
    out.write({"regret": rep.to_dict(), "utility": util.to_dict()},
              diag.series_csv(list(range(len(series))), series), config,
              {"regret": rep.to_dict(), "utility": util.to_dict()})
    if ns.plot:
        from . import plotting
        plotting.line_plot(out.plot_path(), list(range(len(series))), {"regret": series},
                           "running regret of the first mover", ylabel="regret")


def cmd_converge(ns, out):
    budget = _budget(ns)
    horizons = None
    if budget.mode == "iterations":
        horizons = diag.geometric_horizons(ns.first_horizon, int(budget.limit))
        if int(budget.limit) not in horizons:
            horizons.append(int(budget.limit))
    _, traj, echo = _simulation(ns, record_every=None, horizons=horizons)
    if horizons is None:
        traj.horizon_sums[traj.iterations] = (traj.sum_x, traj.sum_y)
    rep = diag.time_average_convergence(traj)
    config = _config_echo(ns, echo)
    out.write({"convergence": rep.to_dict()}, rep.to_csv(), config,
              {"slope": rep.slope, "c_bound": rep.c_bound})
    if ns.plot:
        from . import plotting
        series = {"residual": rep.residuals}
        if math.isfinite(rep.c_bound):
            series["c/T"] = [rep.c_bound / h for h in rep.horizons]
        plotting.line_plot(out.plot_path(), rep.horizons, series, "time-average residual",
                           xlabel="T", ylabel="residual", logx=True, logy=True)


def cmd_recurrence(ns, out):
    _, traj, echo = _simulation(ns)
    eps = _floats(ns.eps)
    found = diag.recurrence_search(traj, eps)
    config = _config_echo(ns, echo)
    rows = [(e, t) for e, t in found]
    out.write({"returns": [{"eps": e, "first_return": t} for e, t in found]},
              _rows_csv(["eps", "first_return"], rows), config)
    if ns.plot:
        _plot_trajectory(out.plot_path(), traj)


def cmd_volume(ns, out):
    spec = _apply_overrides(ns, _resolve_game(ns))
    view = diag.alternating_view(spec["game"], spec["rates"], spec["algo"])
    dets = diag.volume_jacobian_check(view.game, view.eta, view.gamma)
    config = _config_echo(ns, {"resolved_game": spec["name"], "resolved_algo": spec["algo"],
                               "resolved_rates": _rates_echo(spec["rates"])})
    out.write({"det_x_step": dets[0], "det_y_step": dets[1]},
              _rows_csv(["quantity", "value"], [("det_x_step", dets[0]),
                                                ("det_y_step", dets[1])]), config)


def cmd_chaos(ns, out):
    if ns.steps < 0:
        raise UsageError("--t must be non-negative")
    geo = diag.chaos_extreme_points(ns.steps)
    rows = [(geo.t, i + 1, v[0], v[1]) for i, v in enumerate(geo.vertices)]
    out.write(geo.to_dict(), _rows_csv(["t", "vertex", "x", "y"], rows), _config_echo(ns),
              {"area": geo.area, "diameter_squared": geo.diameter_squared})
    if ns.plot:
        from . import plotting
        polys = {f"t={t}": diag.chaos_extreme_points(t).vertices
                 for t in range(max(0, ns.steps - 3), ns.steps + 1)}
        plotting.polygon_plot(out.plot_path(), polys, "image of [-1,1]^2")


def cmd_counterexample(ns, out):
    ns.game = ns.name
    spec = _resolve_game(ns)
    if spec["source"] != "canonical":
        raise UsageError(f"--name must be a canonical game, got {ns.name!r}")
    start = spec["init"].max_abs()
    guard = ns.guard if ns.guard is not None else 100.0 * max(1.0, start)
    extra = {"guard": guard}
    if spec["name"] == "round_robin_cycle":
        budget = _budget(ns)
        if budget.mode != "iterations":
            raise UsageError("round_robin_cycle regret needs --iters")
        game = dummy_agent_extension(spec["game"], ns.dummies)
        init = JointState(tuple(spec["init"].x) + tuple(np.zeros(1) for _ in range(ns.dummies)))
        rates = LearningRates(tuple(spec["rates"].eta) + tuple(np.ones(1)
                                                              for _ in range(ns.dummies)))
        rr = diag.round_robin_regret(game, init, rates, int(budget.limit))
        extra["round_robin_regret"] = rr.to_dict()
    _, traj, echo = _simulation(ns, guard=guard)
    config = _config_echo(ns, dict(echo, guard=guard))
    out.write(dict(extra, trajectory=_trajectory_payload(traj, False)),
              trajectory_csv(traj, False), config, extra)
    if ns.plot:
        _plot_trajectory(out.plot_path(), traj)


def cmd_specnorm(ns, out):
    if ns.game:
        spec = _resolve_game(ns)
        game = spec["game"]
        name = spec["name"]
    else:
        game, _ = random_instance(GeneratorConfig(ns.n_agents, ns.k, ns.seed))
        name = f"random({ns.n_agents},{ns.k})"
    a_bar = reduce_to_meta(game).a_bar
    res = spectral_norm(a_bar, tol=ns.tol, full_output=True)
    thr = learning_rate_threshold(game)
    uniform = len(set(game.dims)) == 1
    bound = game.dims[0] * (game.n_agents - 1) if uniform else None
    payload = {"game": name, "norm": res.value, "iterations": res.iterations,
               "converged": res.converged, "uniform_bound": bound,
               "threshold_spectral": thr.spectral, "threshold_cheap": thr.cheap,
               "classification": classify_game(game).to_dict()}
    rows = [(k, v) for k, v in payload.items() if not isinstance(v, dict)]
    out.write(payload, _rows_csv(["quantity", "value"], rows),
              _config_echo(ns, {"resolved_game": name}))


def _experiment_config(ns):
    cfg = ExperimentConfig.load(ns.config) if ns.config else ExperimentConfig()
    changes = {}
    if ns.agents:
        changes["agents"] = tuple(_ints(ns.agents))
    if ns.strategies:
        changes["strategies"] = tuple(_ints(ns.strategies))
    if ns.games:
        changes["games_per_cell"] = ns.games
    if ns.multipliers:
        changes["multipliers"] = tuple(_floats(ns.multipliers))
    if ns.level:
        changes["level"] = ns.level
    if ns.workers:
        changes["workers"] = ns.workers
    if ns.seed:
        changes["seed_base"] = ns.seed
    b = _budget(ns, required=not ns.config)
    if b is not None:
        changes.update(budget_mode=b.mode, budget=b.limit)
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_compare(ns, out):
    cfg = _experiment_config(ns)
    res = run_comparison(cfg)
    summary = res.summary()
    records = [dict(zip(RESULT_COLUMNS, r)) for r in _csv_records(res)]
    out.write({"summary": summary, "records": records}, res.to_csv(),
              _config_echo(ns, {"experiment": cfg.to_dict()}), {"summary": summary})
    if ns.plot:
        from . import plotting
        rows = summary["cells"]
        plotting.interval_plot(out.plot_path(),
                               [f"N={r['N']},k={r['k']} {r['comparison']}" for r in rows],
                               [r["mean"] for r in rows], [r["lo"] for r in rows],
                               [r["hi"] for r in rows], "optimistic / AltGD residual ratio")


def _csv_records(res):
    import csv
    import io
    reader = csv.reader(io.StringIO(res.to_csv()))
    next(reader)
    return list(reader)


def cmd_sweep(ns, out):
    cfg = _experiment_config(ns)
    sweep = rate_sweep(cfg)
    header = ["multiplier", "comparison", "n", "mean", "lo", "hi", "alt_wins"]
    rows = [[r[h] for h in header] for r in sweep.rows]
    out.write({"rows": sweep.rows}, _rows_csv(header, rows),
              _config_echo(ns, {"experiment": cfg.to_dict()}), {"rows": sweep.rows})
    if ns.plot:
        from . import plotting
        plotting.interval_plot(out.plot_path(),
                               [f"{r['multiplier']:g}x {r['comparison']}" for r in sweep.rows],
                               [r["mean"] for r in sweep.rows], [r["lo"] for r in sweep.rows],
                               [r["hi"] for r in sweep.rows], "ratio by AltGD rate multiplier")


COMMANDS = {
    "simulate": cmd_simulate, "energy": cmd_energy, "regret": cmd_regret,
    "converge": cmd_converge, "recurrence": cmd_recurrence, "volume": cmd_volume,
    "chaos": cmd_chaos, "counterexample": cmd_counterexample, "specnorm": cmd_specnorm,
    "compare": cmd_compare, "sweep": cmd_sweep,
}


def _error_payload(exc):
    if isinstance(exc, DivergenceDetected):
        return exc.to_dict()
    return {"error": type(exc).__name__, "message": str(exc)}


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        dest = _destination(ns)
        if ns.verb in SIM_VERBS and ns.verb not in ("compare", "sweep"):
            _budget(ns)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda m, *a, **k: print(f"warning: {m}", file=sys.stderr)
            COMMANDS[ns.verb](ns, Output(ns, dest))
    except UsageError as exc:
        print(f"altgd {ns.verb}: error: {exc}", file=sys.stderr)
        return 2
    except (AltGDError, ValueError, RuntimeError) as exc:
        payload = json.dumps(_jsonable(_error_payload(exc)), indent=2)
        if ns.format == "json":
            print(payload)
        else:
            print(payload, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
