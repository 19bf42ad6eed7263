"""Command-line front end: ``persmon init|optimize|validate|canonicalize``.

Exit codes: 0 converged (or command succeeded), 2 iteration budget
exhausted or descent stalled, 3 divergence, 4 configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .errors import InfeasibleFitError, PersmonError, PreconditionError, ScenarioError
from .initializer import GAConfig, fourier_fit, mtsp_solve, schedule_to_params_1d, waypoint_report
from .io import (
    builtin_configs,
    load_run_config,
    save_params,
    write_covariance_csv,
    write_json,
    write_log_csv,
    write_trajectory_csv,
    atomic_write_text,
)
from .optimizer import DescentConfig, descend, evaluate, make_model
from .scenario import sensing_terms
from .traj1d import _speed, canonicalize_policy_1d, policy_cost, policy_from_params, switch_bound

EXIT_OK = 0
EXIT_MAX_ITERS = 2
EXIT_DIVERGED = 3
EXIT_CONFIG = 4

_STATUS_CODES = {"converged": EXIT_OK, "max_iters": EXIT_MAX_ITERS, "stalled": EXIT_MAX_ITERS,
                 "diverged": EXIT_DIVERGED}


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="run config file or built-in name (%s)" % ", ".join(builtin_configs()))
    p.add_argument("--scenario", help="scenario JSON (overrides the config's)")
    p.add_argument("--params", help="parameter JSON (overrides the config's)")
    p.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int, help="RK4 steps per period or horizon")
    p.add_argument("--mode", choices=("steady", "transient"))
    p.add_argument("--quiet", action="store_true")
    return p


def _init_flags(p):
    p.add_argument("--generations", type=int, help="GA generations")
    p.add_argument("--harmonics", type=int, help="Fourier harmonics K")
    p.add_argument("--delta", type=float, help="waypoint radius shrink factor")
    p.add_argument("--n-moves", type=int, help="moves per agent for 1D parameters")


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="persmon", description="Persistent monitoring trajectory optimization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", parents=[common], help="MTSP-based initial parameters")
    _init_flags(p)

    p = sub.add_parser("optimize", parents=[common], help="projected gradient descent")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--step", type=float, help="constant step size kappa")
    p.add_argument("--eps", type=float, help="gradient-norm stopping threshold")
    p.add_argument("--armijo", action="store_true", default=None, help="halve steps until sufficient decrease")
    _init_flags(p)
    p.add_argument("--no-timing", action="store_true", help="write zero wall times (byte-stable logs)")

    p = sub.add_parser("validate", parents=[common], help="Monte Carlo check of the filter covariance")
    p.add_argument("--paths", type=int, help="Monte Carlo paths")
    p.add_argument("--horizon", type=float, help="simulated time (default: one period)")
    p.add_argument("--zero-noise", action="store_true", help="noise-free run from a known start")
    _init_flags(p)

    p = sub.add_parser("canonicalize", parents=[common], help="bang/dwell form of a 1D policy")
    p.add_argument("--horizon", type=float, help="policy horizon (default: one period)")
    p.add_argument("--allow-overlap", action="store_true",
                   help="transform even when targets are not isolated")
    return parser


def _config(args):
    overrides = {
        "seed": args.seed, "grid": args.grid, "mode": args.mode,
        "max_iters": getattr(args, "max_iters", None), "step": getattr(args, "step", None),
        "eps": getattr(args, "eps", None), "armijo": getattr(args, "armijo", None),
        "generations": getattr(args, "generations", None),
        "harmonics": getattr(args, "harmonics", None), "delta": getattr(args, "delta", None),
        "n_moves": getattr(args, "n_moves", None), "paths": getattr(args, "paths", None),
        "horizon": getattr(args, "horizon", None),
    }
    return load_run_config(args.config, args.scenario, args.params, overrides)


def _say(args, msg):
    if not args.quiet:
        print(msg)


def initialize(cfg, say=print):
    """MTSP tours converted to the configured parameterization."""
    sc = cfg.scenario
    sched = mtsp_solve(sc.positions(), sc.n_agents, GAConfig(generations=cfg.generations, seed=cfg.seed))
    for j, (tour, length) in enumerate(zip(sched.tours, sched.lengths)):
        say(f"agent {j}: tour {list(map(int, tour))} length {length:.6g}")
    if cfg.kind == "1d":
        params = schedule_to_params_1d(sched, sc, cfg.n_moves)
        say(f"period T = {params.T:.6g}")
    else:
        params = fourier_fit(sched, sc, K=cfg.harmonics, delta=cfg.delta)
        for j, slack in enumerate(waypoint_report(params, sched, sc, cfg.delta)):
            say(f"agent {j}: worst waypoint gap {slack:.3e} (<= 0 means every waypoint is inside its disc)")
    return params


def cmd_init(args):
    cfg = _config(args)
    params = initialize(cfg, say=lambda m: _say(args, m))
    path = Path(args.out) / "params_init.json"
    save_params(path, params)
    _say(args, f"wrote {path}")
    return EXIT_OK


def cmd_optimize(args):
    cfg = _config(args)
    out = Path(args.out)
    params0 = cfg.params if cfg.params is not None else initialize(cfg, say=lambda m: _say(args, m))
    dc = DescentConfig(step=cfg.step, eps=cfg.eps, max_iters=cfg.max_iters, steps=cfg.grid,
                       mode=cfg.mode, armijo=bool(cfg.armijo))
    last = {}

    def track(it, params, ev):
        last["ev"] = ev
        if not args.quiet and (it % 100 == 0):
            print(f"iter {it:5d}  cost {ev.cost:.10g}  |grad| {np.linalg.norm(ev.gradient):.3e}")

    params, log = descend(cfg.scenario, params0, dc, callback=track)
    write_log_csv(out / "log.csv", log, timing=not args.no_timing)
    save_params(out / "params_final.json", params)
    ev = last.get("ev")
    if ev is not None:
        model = make_model(cfg.scenario, params)
        if cfg.mode == "steady":
            q = np.linspace(0.0, 1.0, cfg.grid + 1)
        else:
            q = np.linspace(0.0, cfg.scenario.horizon, cfg.grid + 1) / params.T
        write_trajectory_csv(out / "trajectory.csv", model, params, q)
        write_covariance_csv(out / "covariance.csv", ev.trajectories, params.T)
    costs = log.costs()
    manifest = {
        "config": cfg.name,
        "kind": cfg.kind,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "grid": cfg.grid,
        "step": cfg.step,
        "eps": cfg.eps,
        "status": log.status,
        "message": log.message,
        "iterations": max(log.iterations, 0),
        "initial_cost": float(costs[0]) if costs.size else None,
        "final_cost": float(costs[-1]) if costs.size else None,
        "backend": kernels.backend(),
    }
    write_json(out / "manifest.json", manifest)
    _say(args, f"{log.status}: {log.message}")
    if costs.size:
        _say(args, f"cost {costs[0]:.10g} -> {costs[-1]:.10g} after {log.iterations} iterations")
    return _STATUS_CODES[log.status]


def cmd_validate(args):
    from .covariance import simulate_kalman_bucy

    cfg = _config(args)
    params = cfg.params if cfg.params is not None else initialize(cfg, say=lambda m: _say(args, m))
    sc = cfg.scenario
    model = make_model(sc, params)
    horizon = cfg.horizon or (sc.horizon if cfg.mode == "transient" else params.T)
    t = np.linspace(0.0, horizon, cfg.grid + 1)
    q = t / params.T
    if cfg.mode == "steady":
        q = np.mod(q, 1.0)
    g2, _ = sensing_terms(sc, model.positions(params, q))    # (n, M, N)
    noise = not args.zero_noise
    rows = []
    for i, target in enumerate(sc.targets):
        gains = np.sqrt(g2[:, i, :]).T
        run = simulate_kalman_bucy(target, gains, horizon, cfg.paths, cfg.seed + i, steps=cfg.grid,
                                   noise=noise, known_start=not noise)
        rows.append((i, run.mean_mse, run.mean_trace, run.relative_deviation, run.max_abs_error))
        _say(args, f"target {i}: empirical MSE {run.mean_mse:.6g}  mean tr(Omega) {run.mean_trace:.6g}  "
                   f"deviation {run.relative_deviation:.3%}  max |error| {run.max_abs_error:.3g}")
    text = "target,mse,trace,relative_deviation,max_abs_error\n" + "".join(
        f"{i},{m!r},{tr!r},{d!r},{e!r}\n" for i, m, tr, d, e in rows)
    atomic_write_text(Path(args.out) / "validate.csv", text)
    return EXIT_OK


def cmd_canonicalize(args):
    cfg = _config(args)
    if cfg.kind != "1d" or cfg.params is None:
        raise ScenarioError("params", "canonicalize needs 1D dwell/move parameters")
    sc = cfg.scenario
    params = cfg.params
    horizon = cfg.horizon or params.T
    u = np.array([_speed(a.u_max) for a in sc.agents])
    policy = policy_from_params(params, u, horizon)
    canon = canonicalize_policy_1d(policy, sc, require_isolated=not args.allow_overlap)
    before, _ = policy_cost(sc, policy, cfg.grid)
    after, _ = policy_cost(sc, canon, cfg.grid)
    doc = {
        "horizon": horizon,
        "cost_before": before,
        "cost_after": after,
        "agents": [
            {"s0": float(canon.s0[j]), "breaks": canon.breaks[j].tolist(),
             "controls": canon.controls[j].tolist(), "switches": canon.switch_count(j),
             "switch_bound": switch_bound(sc, horizon, u[j])}
            for j in range(canon.n_agents)
        ],
    }
    write_json(Path(args.out) / "policy_canonical.json", doc)
    _say(args, f"cost {before:.10g} -> {after:.10g}")
    for j, a in enumerate(doc["agents"]):
        _say(args, f"agent {j}: {a['switches']} switches (bound {a['switch_bound']:.4g})")
    return EXIT_OK


_COMMANDS = {"init": cmd_init, "optimize": cmd_optimize, "validate": cmd_validate,
             "canonicalize": cmd_canonicalize}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InfeasibleFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, PreconditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PersmonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
