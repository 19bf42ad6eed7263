"""Dwell/move trajectories on a line.

Each agent alternates between dwelling and moving at full speed. Over one
period T, agent j dwells for ``omega[j, m] * T`` and then moves for
``tau[j, m] * T``, to the right for odd m (1-based) and to the left for
even m. With ``d_m = (-1)^(m+1)`` and the start of the m-th move at
normalized time ``b_m = sum_{p<m} (tau_p + omega_p) + omega_m``,

    s(q) = s0 + T u sum_m d_m clip(q - b_m, 0, tau_m).

A move is "active" at q when ``0 < q - b_m <= tau_m`` and "completed" when
``q - b_m > tau_m``; gradients at event boundaries take the left-segment
value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, PreconditionError, ProjectionError
from .scenario import isolation_metrics

T_MIN = 1e-3
FEAS_TOL = 1e-10
DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 10000
DEFAULT_MOVES = 11


@dataclass(frozen=True, eq=False)
class Params1D:
    """Period, initial positions and normalized dwell/move times.

    ``tau`` and ``omega`` have shape (N, P); unused trailing moves are zeros.
    """

    T: float
    s0: np.ndarray
    tau: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        tau = np.atleast_2d(np.asarray(self.tau, dtype=float))
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        if tau.shape != omega.shape or tau.shape[0] != s0.shape[0]:
            raise InvalidArgument(
                f"tau {tau.shape}, omega {omega.shape} and s0 {s0.shape} do not agree"
            )
        for name, val in (("s0", s0), ("tau", tau), ("omega", omega)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "T", float(self.T))

    kind = "1d"

    @property
    def n_agents(self):
        return self.s0.shape[0]

    @property
    def n_moves(self):
        return self.tau.shape[1]

    @property
    def size(self):
        return 1 + self.n_agents * (1 + 2 * self.n_moves)

    def block(self, j):
        """Slice of agent j's parameters in the flat vector."""
        w = 1 + 2 * self.n_moves
        return slice(1 + j * w, 1 + (j + 1) * w)

    def to_vector(self):
        parts = [np.array([self.T])]
        for j in range(self.n_agents):
            parts += [self.s0[j:j + 1], self.tau[j], self.omega[j]]
        return np.concatenate(parts)

    def from_vector(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise InvalidArgument(f"expected {self.size} parameters, got {vec.shape}")
        P = self.n_moves
        blocks = vec[1:].reshape(self.n_agents, 1 + 2 * P)
        return Params1D(T=vec[0], s0=blocks[:, 0], tau=blocks[:, 1:1 + P], omega=blocks[:, 1 + P:])

    def labels(self):
        out = ["T"]
        for j in range(self.n_agents):
            out.append(f"agent{j}.s0")
            out += [f"agent{j}.tau{m + 1}" for m in range(self.n_moves)]
            out += [f"agent{j}.omega{m + 1}" for m in range(self.n_moves)]
        return out

    def violation(self, periodic=True):
        """Largest constraint violation (0 for feasible parameters)."""
        v = max(0.0, -float(self.tau.min(initial=0.0)), -float(self.omega.min(initial=0.0)), -self.T)
        if periodic:
            total = self.tau.sum(axis=1) + self.omega.sum(axis=1)
            v = max(v, float(np.max(total - 1.0, initial=0.0)))
            v = max(v, float(np.max(np.abs(self.tau @ _signs(self.n_moves)), initial=0.0)))
        return v

    def is_feasible(self, periodic=True, tol=FEAS_TOL):
        return self.violation(periodic) <= tol

    def replace(self, **changes):
        kw = dict(T=self.T, s0=self.s0, tau=self.tau, omega=self.omega)
        kw.update(changes)
        return Params1D(**kw)


def _signs(P):
    """Direction of each move: +1, -1, +1, ..."""
    return np.where(np.arange(P) % 2 == 0, 1.0, -1.0)


def _move_starts(tau, omega):
    ends = np.cumsum(tau + omega)
    return np.concatenate([[0.0], ends[:-1]]) + omega


def _speed(u_max):
    u = float(u_max)
    return 1.0 if math.isinf(u) else u


def _events(params, j, q):
    q = np.atleast_1d(np.asarray(q, dtype=float))
    tau, omega = params.tau[j], params.omega[j]
    x = q[:, None] - _move_starts(tau, omega)[None, :]
    moving = (x > 0) & (x <= tau[None, :])
    done = x > tau[None, :]
    clipped = np.clip(x, 0.0, tau[None, :])
    return q, clipped, moving, done


def position_1d(params, j, q, u_max=1.0, periodic=True):
    """Position of agent j at normalized time(s) q.

    Parameters violating the sign constraints (and, when ``periodic``, the
    closure constraints) are rejected.
    """
    if not params.is_feasible(periodic):
        raise InvalidArgument(
            f"infeasible parameters (violation {params.violation(periodic):.3e}); project them first"
        )
    return _position(params, j, q, u_max)


def _position(params, j, q, u_max=1.0):
    if not 0 <= j < params.n_agents:
        raise InvalidArgument(f"agent index {j} out of range")
    u = _speed(u_max)
    q_arr, clipped, _, _ = _events(params, j, q)
    s = params.s0[j] + params.T * u * (clipped @ _signs(params.n_moves))
    return float(s[0]) if np.ndim(q) == 0 else s


def velocity_1d(params, j, q, u_max=1.0):
    """ds/dq of agent j (left-segment convention at events)."""
    u = _speed(u_max)
    _, _, moving, _ = _events(params, j, q)
    v = params.T * u * (moving @ _signs(params.n_moves))
    return float(v[0]) if np.ndim(q) == 0 else v


def position_gradients_1d(params, j, q, u_max=1.0):
    """Partials of s_j(q) with respect to agent j's parameters.

    Returns a dict with arrays ``tau`` and ``omega`` of shape (n, P) and
    ``T`` and ``s0`` of shape (n,), for n query times.
    """
    u = _speed(u_max)
    q_arr, clipped, moving, done = _events(params, j, q)
    d = _signs(params.n_moves)
    T = params.T
    dm = moving * d[None, :]
    # suffix sums over m > p and m >= p
    tail_incl = np.cumsum(dm[:, ::-1], axis=1)[:, ::-1]
    tail_excl = tail_incl - dm
    dtau = T * u * (done * d[None, :] - tail_excl)
    domega = -T * u * tail_incl
    disp = u * (clipped @ d)
    return {"tau": dtau, "omega": domega, "T": disp, "s0": np.ones_like(q_arr)}


# -- projection -------------------------------------------------------------

def _dykstra(v, P, tol=DYKSTRA_TOL, max_sweeps=DYKSTRA_MAX_SWEEPS):
    """Project v = (tau, omega) onto {v >= 0, sum v <= 1, sum_m (-1)^m tau_m = 0}."""
    a = np.ones(2 * P)
    b = np.concatenate([_signs(P), np.zeros(P)])
    bb = b @ b
    x = v.copy()
    p1 = np.zeros_like(x)
    p2 = np.zeros_like(x)
    p3 = np.zeros_like(x)
    for _ in range(max_sweeps):
        x_old, q1, q2 = x, p1, p2
        y = x + p1
        x1 = np.maximum(y, 0.0)
        p1 = y - x1
        y = x1 + p2
        excess = a @ y - 1.0
        x2 = y - (excess / (2 * P)) * a if excess > 0 else y
        p2 = y - x2
        y = x2 + p3
        x3 = y - ((b @ y) / bb) * b
        p3 = y - x3
        x = x3
        if not np.all(np.isfinite(x)):
            break
        # the corrections must settle too, otherwise a stalled iterate stops early
        change = max(np.max(np.abs(x - x_old)), np.max(np.abs(p1 - q1)), np.max(np.abs(p2 - q2)))
        if change < tol:
            return x
    raise ProjectionError(
        f"Dykstra projection did not converge in {max_sweeps} sweeps (non-finite parameters?)"
    )


def project_params_1d(params, periodic=True, t_min=T_MIN):
    """Euclidean projection onto the feasible dwell/move set, agent by agent.

    Periodic parameters must satisfy tau, omega >= 0, sum(tau + omega) <= 1
    and equal left/right movement; transient parameters only the sign
    constraints. T is clamped at ``t_min``. Feasible inputs come back
    unchanged.
    """
    T = max(float(params.T), t_min)
    if not np.isfinite(params.T) or not np.all(np.isfinite(params.tau)) \
            or not np.all(np.isfinite(params.omega)):
        raise ProjectionError("cannot project non-finite parameters")
    if params.is_feasible(periodic) and T == params.T:
        return params
    P = params.n_moves
    tau = np.array(params.tau)
    omega = np.array(params.omega)
    for j in range(params.n_agents):
        single = params.replace(s0=params.s0[j:j + 1], tau=tau[j:j + 1], omega=omega[j:j + 1])
        if single.is_feasible(periodic):
            continue
        if periodic:
            x = _dykstra(np.concatenate([tau[j], omega[j]]), P)
        else:
            x = np.maximum(np.concatenate([tau[j], omega[j]]), 0.0)
        tau[j], omega[j] = x[:P], x[P:]
    return params.replace(T=T, tau=tau, omega=omega)


# -- model adapter ----------------------------------------------------------

class DwellMoveModel:
    """Evaluates positions and parameter Jacobians for the optimizer."""

    def __init__(self, scenario):
        if scenario.dimension != 1:
            raise InvalidArgument("dwell/move trajectories require a 1-D scenario")
        self.scenario = scenario
        self.u = np.array([_speed(a.u_max) for a in scenario.agents])

    def positions(self, params, q):
        q = np.asarray(q, dtype=float)
        out = np.empty((q.size, params.n_agents, 1))
        for j in range(params.n_agents):
            out[:, j, 0] = _position(params, j, q, self.u[j])
        return out

    def velocities(self, params, q):
        """dq-velocity ds/dq, shape (n, N, 1)."""
        q = np.asarray(q, dtype=float)
        out = np.empty((q.size, params.n_agents, 1))
        for j in range(params.n_agents):
            out[:, j, 0] = velocity_1d(params, j, q, self.u[j])
        return out

    def jacobian(self, params, q):
        """Positions (n, N, 1) and their Jacobian (n, N, 1, D) at fixed q."""
        q = np.asarray(q, dtype=float)
        n = q.size
        pos = self.positions(params, q)
        jac = np.zeros((n, params.n_agents, 1, params.size))
        P = params.n_moves
        for j in range(params.n_agents):
            g = position_gradients_1d(params, j, q, self.u[j])
            blk = params.block(j)
            cols = np.concatenate([g["s0"][:, None], g["tau"], g["omega"]], axis=1)
            jac[:, j, 0, blk] = cols
            jac[:, j, 0, 0] = g["T"]
        return pos, jac

    def transient_jacobian(self, params, t):
        """Positions and Jacobian at physical times t (no wrap-around)."""
        t = np.asarray(t, dtype=float)
        q = t / params.T
        pos, jac = self.jacobian(params, q)
        vel = self.velocities(params, q)
        jac[..., 0] += vel * (-q / params.T)[:, None, None]
        return pos, jac

    def event_signature(self, params, q):
        """Boolean move-state pattern at q; gradients are smooth while it is constant."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        parts = []
        for j in range(params.n_agents):
            _, _, moving, done = _events(params, j, q)
            parts += [moving.ravel(), done.ravel()]
        return np.concatenate(parts)

    def steady_effort(self, params):
        """Integral over one period (in q) of sum_j u_j^2 and its gradient."""
        grad = np.zeros(params.size)
        value = 0.0
        P = params.n_moves
        for j in range(params.n_agents):
            u2 = self.u[j] ** 2
            value += u2 * float(params.tau[j].sum())
            blk = params.block(j)
            grad[blk.start + 1:blk.start + 1 + P] = u2
        return value, grad

    def transient_effort(self, params, horizon, times=None):
        """Integral over [0, horizon] of sum_j u_j^2 dt and its gradient.

        Computed exactly from the move durations; ``times`` is accepted for
        interface symmetry and ignored.
        """
        grad = np.zeros(params.size)
        value = 0.0
        Qh = horizon / params.T
        P = params.n_moves
        for j in range(params.n_agents):
            u2 = self.u[j] ** 2
            _, clipped, moving, done = _events(params, j, Qh)
            clipped, moving, done = clipped[0], moving[0].astype(float), done[0].astype(float)
            value += u2 * params.T * clipped.sum()
            tail_incl = np.cumsum(moving[::-1])[::-1]
            blk = params.block(j)
            grad[blk.start + 1:blk.start + 1 + P] = u2 * params.T * (done - (tail_incl - moving))
            grad[blk.start + 1 + P:blk.stop] = -u2 * params.T * tail_incl
            grad[0] += u2 * (clipped.sum() - moving.sum() * Qh)
        return value, grad

    def project(self, params, periodic=True):
        return project_params_1d(params, periodic=periodic)


# -- policies and the bang/dwell canonical form -----------------------------

@dataclass(frozen=True, eq=False)
class Policy1D:
    """Piecewise-constant speed controls on [0, horizon].

    ``breaks[j]`` holds increasing switch times starting at 0 and ending at
    the horizon; ``controls[j][k]`` is the velocity on
    ``[breaks[j][k], breaks[j][k+1])``.
    """

    s0: np.ndarray
    breaks: tuple
    controls: tuple
    u_max: np.ndarray

    def __post_init__(self):
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        u = np.broadcast_to(np.asarray(self.u_max, dtype=float), s0.shape).copy()
        br = tuple(np.asarray(b, dtype=float) for b in self.breaks)
        ct = tuple(np.asarray(c, dtype=float) for c in self.controls)
        if len(br) != s0.size or len(ct) != s0.size:
            raise InvalidArgument("one break/control sequence per agent is required")
        for j, (b, c) in enumerate(zip(br, ct)):
            if b.ndim != 1 or b.size != c.size + 1 or np.any(np.diff(b) <= 0):
                raise InvalidArgument(f"agent {j}: breaks must increase and bracket every control")
            if np.any(np.abs(c) > u[j] * (1 + 1e-12)):
                raise InvalidArgument(f"agent {j}: control exceeds the speed bound")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "u_max", u)
        object.__setattr__(self, "breaks", br)
        object.__setattr__(self, "controls", ct)

    @property
    def n_agents(self):
        return self.s0.size

    @property
    def horizon(self):
        return float(self.breaks[0][-1])

    def knots(self, j):
        b, c = self.breaks[j], self.controls[j]
        return np.concatenate([[self.s0[j]], self.s0[j] + np.cumsum(c * np.diff(b))])

    def position(self, j, t):
        return np.interp(t, self.breaks[j], self.knots(j))

    def positions(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([self.position(j, t) for j in range(self.n_agents)], axis=-1)

    def switch_count(self, j):
        c = self.controls[j]
        return int(np.count_nonzero(np.diff(c) != 0))


def policy_from_params(params, u_max, horizon):
    """Unroll periodic dwell/move parameters into a policy on [0, horizon]."""
    u = np.broadcast_to(np.asarray(u_max, dtype=float), (params.n_agents,))
    breaks, controls = [], []
    d = _signs(params.n_moves)
    for j in range(params.n_agents):
        seg_t, seg_u = [], []
        for m in range(params.n_moves):
            seg_t += [params.omega[j, m], params.tau[j, m]]
            seg_u += [0.0, d[m] * _speed(u[j])]
        rest = 1.0 - params.tau[j].sum() - params.omega[j].sum()
        seg_t.append(max(rest, 0.0))
        seg_u.append(0.0)
        durations = np.array(seg_t) * params.T
        vals = np.array(seg_u)
        keep = durations > 0
        durations, vals = durations[keep], vals[keep]
        b, c = [0.0], []
        t = 0.0
        while t < horizon:
            for dur, val in zip(durations, vals):
                end = min(t + dur, horizon)
                if end > t:
                    b.append(end)
                    c.append(val)
                t = end
                if t >= horizon:
                    break
        b, c = _merge(np.array(b), np.array(c))
        breaks.append(b)
        controls.append(c)
    return Policy1D(s0=params.s0, breaks=tuple(breaks), controls=tuple(controls), u_max=u)


def _merge(breaks, controls):
    keep = np.concatenate([[True], np.diff(controls) != 0])
    idx = np.flatnonzero(keep)
    return np.concatenate([breaks[idx], [breaks[-1]]]), controls[idx]


def _visits(times, knots, targets, radius):
    """Ordered (entry time, target) pairs of a piecewise-linear path.

    Consecutive visits to the same target are merged; a visit starts at
    the infimum of the open set where |s - x| < r.
    """
    entries = []
    for k in range(times.size - 1):
        t0, t1, a, b = times[k], times[k + 1], knots[k], knots[k + 1]
        v = (b - a) / (t1 - t0)
        for i, (x, r) in enumerate(zip(targets, radius)):
            if v == 0.0:
                if abs(a - x) < r:
                    entries.append((t0, i))
                continue
            lo = t0 + (x - r - a) / v
            hi = t0 + (x + r - a) / v
            lo, hi = min(lo, hi), max(lo, hi)
            start, end = max(lo, t0), min(hi, t1)
            if start < end:
                entries.append((start, i))
    entries.sort()
    visits = []
    for t, i in entries:
        if not visits or visits[-1][1] != i:
            visits.append((t, i))
    return visits


def _closest_path(t0, t1, a, b, x, u):
    """Breaks and controls of the path nearest to x from (t0, a) to (t1, b) at speed <= u."""
    span = t1 - t0
    cands = [t0, t1,
             0.5 * (a - b + u * (t0 + t1)) / u, 0.5 * (b - a + u * (t0 + t1)) / u,
             t0 + (a - x) / u, t1 - (b - x) / u, t0 + (x - a) / u, t1 - (x - b) / u]
    ts = np.unique(np.clip(np.array(cands), t0, t1))

    def s_at(tau):
        lo = max(a - u * (tau - t0), b - u * (t1 - tau))
        hi = min(a + u * (tau - t0), b + u * (t1 - tau))
        if lo > hi:  # roundoff when the endpoints are barely reachable
            lo = hi = 0.5 * (lo + hi)
        return min(max(x, lo), hi)

    vals = np.array([s_at(tau) for tau in ts])
    keep = np.concatenate([[True], np.diff(ts) > 1e-12 * max(1.0, span)])
    ts, vals = ts[keep], vals[keep]
    ts[-1] = t1
    vals[0], vals[-1] = a, b
    slopes = np.diff(vals) / np.diff(ts)
    controls = np.select([slopes > 0.5 * u, slopes < -0.5 * u], [u, -u], 0.0)
    return ts, controls


def canonicalize_policy_1d(policy, scenario, require_isolated=True):
    """Bang/dwell policy that senses every target at least as well.

    Keeps each agent's visit start times and positions; in between it moves
    at full speed toward the currently visited target, dwells there and
    leaves just in time to start the next visit where the input did.
    """
    r_max, d_min = isolation_metrics(scenario)
    if require_isolated and not d_min > 0:
        raise PreconditionError(
            f"targets are not isolated (d_min = {d_min:.4g}); pass require_isolated=False "
            "to transform without the optimality guarantee"
        )
    x = scenario.positions()[:, 0]
    R = scenario.radius_matrix()
    breaks, controls = [], []
    for j in range(policy.n_agents):
        u = float(policy.u_max[j])
        b = policy.breaks[j]
        knots = policy.knots(j)
        horizon = float(b[-1])
        visits = _visits(b, knots, x, R[:, j])
        if not visits:
            anchors = [(0.0, horizon, None)]
        else:
            times = [t for t, _ in visits]
            ids = [i for _, i in visits]
            anchors = []
            if times[0] > 0:
                anchors.append((0.0, times[0], ids[0]))
            for p, (t, i) in enumerate(zip(times, ids)):
                end = times[p + 1] if p + 1 < len(times) else horizon
                if end > t:
                    anchors.append((t, end, i))
        all_b, all_c = [0.0], []
        for t0, t1, i in anchors:
            a = float(np.interp(t0, b, knots))
            e = float(np.interp(t1, b, knots))
            target = a if i is None else x[i]
            ts, cs = _closest_path(t0, t1, a, e, target, u)
            all_b += list(ts[1:])
            all_c += list(cs)
        nb, nc = _merge(np.array(all_b), np.array(all_c))
        breaks.append(nb)
        controls.append(nc)
    return Policy1D(s0=policy.s0, breaks=tuple(breaks), controls=tuple(controls), u_max=policy.u_max)


def switch_bound(scenario, horizon, u_max=1.0):
    """Upper bound on control switches of the canonical policy."""
    _, d_min = isolation_metrics(scenario)
    return 2.0 * horizon * float(u_max) / d_min + 4.0


def policy_cost(scenario, policy, steps=2000):
    """Time-averaged total covariance trace of a policy over its horizon."""
    from .covariance import propagate_covariance
    from .scenario import sensing_terms

    horizon = policy.horizon
    t = np.linspace(0.0, horizon, 2 * steps + 1)
    pos = policy.positions(t)[:, :, None]
    g2, _ = sensing_terms(scenario, pos)
    eta = g2.sum(axis=2).T
    total = 0.0
    for i, target in enumerate(scenario.targets):
        traj = propagate_covariance(target, eta[i], None, horizon, steps)
        total += traj.time_average_trace()
    return total, eta
