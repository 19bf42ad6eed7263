"""Cost, gradient and projected gradient descent.

Steady-state cost (normalized time, one period)::

    J = int_0^1 sum_i tr W_i(q) dq + beta * effort

Transient cost over a horizon t_f::

    J = (1 / t_f) [ int_0^t_f sum_i tr W_i(t) dt + beta * effort ]

Integrals are trapezoidal on the RK4 nodes. The gradient is assembled
from the covariance sensitivities of every target, restricted to the
parameters that actually change that target's signal power (plus T in
steady mode, which also scales the Riccati equation).

Parameter vectors start with T, followed by one block per agent (see
``Params1D.to_vector`` and ``ParamsFourier.to_vector``).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import covariance as cv
from .errors import (
    ContractionError,
    DivergenceError,
    InvalidArgument,
    NeverVisitedError,
    NonConvergenceError,
)
from .fourier import FourierModel, ParamsFourier
from .scenario import build_eta_profile
from .traj1d import DwellMoveModel, Params1D

DEFAULT_STEPS = cv.DEFAULT_STEPS


def make_model(scenario, params):
    if isinstance(params, Params1D):
        return DwellMoveModel(scenario)
    if isinstance(params, ParamsFourier):
        if params.dim != scenario.dimension:
            raise InvalidArgument(
                f"Fourier parameters have {params.dim} axes, scenario has {scenario.dimension}"
            )
        return FourierModel(scenario)
    raise InvalidArgument(f"unsupported parameter type {type(params).__name__}")


def _check_agents(scenario, params):
    if params.n_agents != scenario.n_agents:
        raise InvalidArgument(
            f"parameters describe {params.n_agents} agents, scenario has {scenario.n_agents}"
        )


@dataclass
class GradientVector:
    """Gradient aligned with the flat parameter layout."""

    values: np.ndarray
    labels: list

    def norm(self):
        return float(np.linalg.norm(self.values))

    def as_dict(self):
        return dict(zip(self.labels, self.values.tolist()))

    def __len__(self):
        return self.values.size


@dataclass
class Evaluation:
    cost: float
    gradient: np.ndarray | None
    trajectories: list
    profile: object
    effort: float
    mode: str


def _fine_grid(mode, scenario, steps):
    if mode == "steady":
        return np.linspace(0.0, 1.0, 2 * steps + 1)
    return np.linspace(0.0, scenario.horizon, 2 * steps + 1)


def evaluate(scenario, params, mode=None, steps=DEFAULT_STEPS, gradient=True, warm=None,
             tol=cv.PERIODIC_TOL):
    """Cost (and optionally gradient) of ``params``.

    ``warm`` maps target index to an initial covariance for the periodic
    solver and is updated in place with the new periodic states.
    """
    mode = scenario.mode if mode is None else mode
    if mode not in ("steady", "transient"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    if mode == "transient" and not (scenario.horizon and scenario.horizon > 0):
        raise InvalidArgument("transient mode needs a positive horizon")
    if steps < 2:
        raise InvalidArgument("grid must have at least 2 steps")
    _check_agents(scenario, params)
    model = make_model(scenario, params)
    grid = _fine_grid(mode, scenario, steps)
    if mode == "steady":
        evaluator = lambda g: model.jacobian(params, g)  # noqa: E731
    else:
        evaluator = lambda g: model.transient_jacobian(params, g)  # noqa: E731
    profile = build_eta_profile(scenario, evaluator, grid, exact_steps=True)
    D = params.size
    grad = np.zeros(D) if gradient else None
    total = 0.0
    trajs = []
    for i, target in enumerate(scenario.targets):
        eta = profile.eta[i]
        deta = profile.deta[i]
        active = np.flatnonzero(np.any(deta != 0.0, axis=1))
        if mode == "steady":
            omega0 = None if warm is None else warm.get(i)
            traj = cv.solve_periodic_riccati(target, eta, params.T, steps=steps, tol=tol,
                                             omega0=omega0)
            if warm is not None:
                warm[i] = traj.omega[0]
            total += float(trapezoid(traj.trace(), traj.grid))
            if gradient:
                active = np.union1d(active, [0])
                dT = (active == 0).astype(float)
                grad[active] += cv.steady_trace_gradient(target, traj, deta[active], dT)
        else:
            traj = cv.propagate_covariance(target, eta, None, scenario.horizon, steps)
            total += float(trapezoid(traj.trace(), traj.grid)) / scenario.horizon
            if gradient and active.size:
                sens = cv.propagate_transient_sensitivity(target, deta[active], traj)
                grad[active] += sens.integrated_trace() / scenario.horizon
        trajs.append(traj)
    if mode == "steady":
        effort, effort_grad = model.steady_effort(params)
    else:
        t_nodes = grid[::2]
        effort, effort_grad = model.transient_effort(params, scenario.horizon, t_nodes)
        effort /= scenario.horizon
        effort_grad = effort_grad / scenario.horizon
    cost = total + scenario.beta * effort
    if gradient:
        grad += scenario.beta * effort_grad
    return Evaluation(cost=cost, gradient=grad, trajectories=trajs, profile=profile,
                      effort=effort, mode=mode)


def cost_steady(scenario, params, steps=DEFAULT_STEPS, tol=cv.PERIODIC_TOL):
    return evaluate(scenario, params, "steady", steps, gradient=False, tol=tol).cost


def cost_transient(scenario, params, steps=DEFAULT_STEPS):
    return evaluate(scenario, params, "transient", steps, gradient=False).cost


def gradient_steady(scenario, params, steps=DEFAULT_STEPS, tol=cv.PERIODIC_TOL):
    ev = evaluate(scenario, params, "steady", steps, gradient=True, tol=tol)
    return GradientVector(ev.gradient, params.labels())


def gradient_transient(scenario, params, steps=DEFAULT_STEPS):
    ev = evaluate(scenario, params, "transient", steps, gradient=True)
    return GradientVector(ev.gradient, params.labels())


def finite_difference_gradient(cost_fn, params, indices=None, rel_step=1e-5):
    """Central differences of ``cost_fn`` with step h = rel_step * max(1, |theta|)."""
    vec = params.to_vector()
    idx = range(vec.size) if indices is None else indices
    out = np.full(vec.size, np.nan)
    for d in idx:
        h = rel_step * max(1.0, abs(vec[d]))
        vp, vm = vec.copy(), vec.copy()
        vp[d] += h
        vm[d] -= h
        out[d] = (cost_fn(params.from_vector(vp)) - cost_fn(params.from_vector(vm))) / (2 * h)
    return out


def _signature(scenario, params, mode, steps):
    model = make_model(scenario, params)
    grid = _fine_grid(mode, scenario, steps)
    q = grid if mode == "steady" else grid / params.T
    pos = model.positions(params, q)
    disp = pos[:, None, :, :] - scenario.positions()[None, :, None, :]
    d = np.sqrt(np.sum(disp * disp, axis=-1))
    r = scenario.radius_matrix()[None]
    # on a line |s - x| has a cusp wherever the displacement changes sign
    centre = np.sign(disp) if scenario.dimension == 1 else (d > 0)
    return np.concatenate([(d < r).ravel(), centre.ravel(), model.event_signature(params, q)])


def kink_free(scenario, params, index, h, mode=None, steps=DEFAULT_STEPS):
    """True when moving parameter ``index`` by +-h crosses no sensing or event boundary.

    The discretized cost is smooth in the parameter over that interval
    exactly when no grid sample changes sides of a sensing radius or
    passes through a target centre and, for dwell/move trajectories, no
    sample changes its move state.
    """
    mode = scenario.mode if mode is None else mode
    vec = params.to_vector()
    sig = _signature(scenario, params, mode, steps)
    for sgn in (-1.0, 1.0):
        v = vec.copy()
        v[index] += sgn * h
        if not np.array_equal(sig, _signature(scenario, params.from_vector(v), mode, steps)):
            return False
    return True


# -- descent ----------------------------------------------------------------

@dataclass
class DescentConfig:
    """Projected gradient descent settings.

    ``step`` is the constant step size; with ``armijo`` the step is halved
    until the sufficient-decrease test passes.
    """

    step: float = 1e-4
    eps: float = 1e-4
    max_iters: int = 4000
    steps: int = DEFAULT_STEPS
    mode: str | None = None
    armijo: bool = False
    armijo_c: float = 1e-4
    max_halvings: int = 30

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidArgument("step must be positive")
        if not self.eps >= 0:
            raise InvalidArgument("eps must be nonnegative")
        if self.max_iters < 0:
            raise InvalidArgument("max_iters must be nonnegative")
        if self.steps < 2:
            raise InvalidArgument("grid must have at least 2 steps")


@dataclass
class LogEntry:
    iteration: int
    cost: float
    grad_norm: float
    step: float
    wall_ms: float


@dataclass
class OptimizationLog:
    entries: list = field(default_factory=list)
    status: str = "max_iters"
    message: str = ""

    def append(self, entry):
        if self.entries and entry.iteration != self.entries[-1].iteration + 1:
            raise ValueError("log iterations must be contiguous")
        self.entries.append(entry)

    def costs(self):
        return np.array([e.cost for e in self.entries])

    @property
    def iterations(self):
        return len(self.entries) - 1


_FAILURES = (DivergenceError, NeverVisitedError, ContractionError, NonConvergenceError,
             FloatingPointError)


def descend(scenario, params0, config=None, callback=None, clock=time.perf_counter):
    """Projected gradient descent from ``params0``.

    Returns ``(params, log)``. ``log.status`` is ``"converged"`` when the
    gradient norm drops to ``eps``, ``"max_iters"`` when the budget runs
    out and ``"diverged"`` when an iterate produces a non-finite cost or a
    failed covariance solve; the last finite iterate is returned then.
    ``callback(iteration, params, evaluation)`` is called after every
    evaluation; a truthy return value ends the run with status
    ``"stopped"``.
    """
    config = DescentConfig() if config is None else config
    mode = scenario.mode if config.mode is None else config.mode
    periodic = mode == "steady"
    model = make_model(scenario, params0)
    params = model.project(params0, periodic=periodic)
    warm = {} if periodic else None
    log = OptimizationLog()
    t0 = clock()
    try:
        ev = evaluate(scenario, params, mode, config.steps, warm=warm)
    except _FAILURES as exc:
        log.status, log.message = "diverged", f"initial parameters: {exc}"
        return params, log
    if not np.isfinite(ev.cost):
        log.status, log.message = "diverged", "initial cost is not finite"
        return params, log
    gnorm = float(np.linalg.norm(ev.gradient))
    log.append(LogEntry(0, ev.cost, gnorm, 0.0, (clock() - t0) * 1e3))
    it = 0
    if callback and callback(0, params, ev):
        log.status, log.message = "stopped", "stopped by callback at iteration 0"
        return params, log
    while True:
        if gnorm <= config.eps:
            log.status, log.message = "converged", f"gradient norm {gnorm:.3e} <= {config.eps:g}"
            break
        if it >= config.max_iters:
            log.status, log.message = "max_iters", f"stopped after {it} iterations"
            break
        t_start = clock()
        kappa = config.step
        x = params.to_vector()
        g = ev.gradient
        new_ev = None
        failure = None
        for _ in range(config.max_halvings + 1 if config.armijo else 1):
            cand = model.project(params.from_vector(x - kappa * g), periodic=periodic)
            trial_warm = dict(warm) if warm is not None else None
            try:
                trial = evaluate(scenario, cand, mode, config.steps, warm=trial_warm)
            except _FAILURES as exc:
                trial, failure = None, exc
            if trial is not None and np.isfinite(trial.cost) and np.all(np.isfinite(trial.gradient)):
                decrease = config.armijo_c * float(g @ (cand.to_vector() - x))
                if not config.armijo or trial.cost <= ev.cost + decrease:
                    new_ev, failure = trial, None
                    if warm is not None:
                        warm.update(trial_warm)
                    break
            elif trial is not None:
                failure = FloatingPointError("non-finite cost or gradient")
            kappa *= 0.5
        if new_ev is None:
            if failure is not None:
                log.status, log.message = "diverged", f"iteration {it + 1}: {failure}"
            else:
                log.status, log.message = "stalled", "no step satisfied the sufficient-decrease test"
            break
        params, ev = cand, new_ev
        it += 1
        gnorm = float(np.linalg.norm(ev.gradient))
        log.append(LogEntry(it, ev.cost, gnorm, kappa, (clock() - t_start) * 1e3))
        if callback and callback(it, params, ev):
            log.status, log.message = "stopped", f"stopped by callback at iteration {it}"
            break
    return params, log
