"""Covariance dynamics of the Kalman-Bucy filter and their sensitivities.

The estimation covariance of a target sensed with signal power eta obeys

    dW/dt = A W + W A' + Q - eta W G W,        G = H' R^-1 H.

In steady-state (periodic) mode the equation is written in normalized
time q = t / T, which multiplies the right side by the period T. The
periodic solution W(q) is found by iterating the one-period map, and its
parameter derivatives are assembled from a homogeneous transition matrix
X(q), a zero-start forced response Z(q) and the fixed point L of the
discrete Lyapunov equation L = X(1) L X(1)' + Z(1):

    dW/dtheta (q) = X(q) L X(q)' + Z(q).

All ODEs use fixed-step RK4 (see ``kernels``). The sensitivity
integrators linearize the *discrete* covariance map by reusing its RK4
stage states, so gradients match finite differences of the discretized
cost up to roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import lu_factor, lu_solve

from . import kernels
from .errors import (
    ContractionError,
    DivergenceError,
    InvalidArgument,
    NeverVisitedError,
    NonConvergenceError,
)

DEFAULT_STEPS = 2000
OVERFLOW_GUARD = 1e12
PERIODIC_TOL = 1e-9
MAX_PERIODS = 500
CONTRACTION_MARGIN = 1e-9
KRONECKER_MAX_DIM = 8


@dataclass
class CovarianceTrajectory:
    """Covariance samples at the RK4 nodes.

    ``stages`` keeps the three intermediate RK4 states of every step; the
    sensitivity integrators need them. ``fine_eta`` is the signal power on
    the fine grid that produced the trajectory.
    """

    target_id: int
    grid: np.ndarray
    omega: np.ndarray
    steady: bool = False
    scale: float = 1.0
    stages: np.ndarray | None = field(default=None, repr=False)
    fine_eta: np.ndarray | None = field(default=None, repr=False)
    periods: int = 0
    residual: float = 0.0

    @property
    def steps(self):
        return self.omega.shape[0] - 1

    def trace(self):
        return np.trace(self.omega, axis1=1, axis2=2)

    def time_average_trace(self):
        span = self.grid[-1] - self.grid[0]
        return float(trapezoid(self.trace(), self.grid) / span)


@dataclass
class SensitivityTrajectory:
    """Covariance derivatives for a batch of D parameters.

    ``sigma`` has shape (D, S + 1, L, L). In steady mode ``sigma_h`` is the
    homogeneous transition (S + 1, L, L), ``sigma_zi`` the forced response
    (D, S + 1, L, L) and ``lam`` the discrete Lyapunov solutions (D, L, L).
    """

    target_id: int
    params: tuple
    grid: np.ndarray
    sigma: np.ndarray
    sigma_h: np.ndarray | None = None
    sigma_zi: np.ndarray | None = None
    lam: np.ndarray | None = None

    def integrated_trace(self):
        """Trapezoidal integral of tr(sigma) over the grid, one value per parameter."""
        return trapezoid(np.trace(self.sigma, axis1=2, axis2=3), self.grid, axis=1)


# -- helpers ----------------------------------------------------------------

def fine_samples(values, steps=None):
    """Return ``(fine, S)`` with ``fine`` sampled at nodes and midpoints.

    ``values`` may be a scalar (needs ``steps``), node samples of length
    ``S + 1`` (midpoints linearly interpolated) or fine samples of length
    ``2S + 1``. The last axis is the time axis.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        if steps is None:
            steps = DEFAULT_STEPS
        return np.full(2 * steps + 1, float(arr)), int(steps)
    n = arr.shape[-1]
    if steps is None:
        steps = n - 1
    if n == 2 * steps + 1:
        return np.ascontiguousarray(arr), int(steps)
    if n == steps + 1:
        if steps < 1:
            raise InvalidArgument("at least one integration step is required")
        fine = np.empty(arr.shape[:-1] + (2 * steps + 1,))
        fine[..., ::2] = arr
        fine[..., 1::2] = 0.5 * (arr[..., :-1] + arr[..., 1:])
        return fine, int(steps)
    raise InvalidArgument(
        f"samples of length {n} match neither {steps + 1} nodes nor {2 * steps + 1} fine points"
    )


def _span(span):
    if np.ndim(span) == 0:
        t0, t1 = 0.0, float(span)
    else:
        t0, t1 = (float(v) for v in span)
    if not t1 > t0:
        raise InvalidArgument(f"time span must be increasing, got [{t0}, {t1}]")
    return t0, t1


def _check_spd(M, what):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-10):
        raise InvalidArgument(f"{what} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (M + M.T)).min() <= 0:
        raise InvalidArgument(f"{what} must be positive definite")
    return M


def _integrate(target, fine, steps, omega0, t0, t1, scale, guard):
    h = (t1 - t0) / steps
    nodes, stages, status, k_fail = kernels.riccati_rk4(
        target.A, target.Q, target.G, fine, h, scale, omega0, guard
    )
    if status != kernels.OK:
        raise DivergenceError(
            target.id, f"covariance norm exceeded {guard:.1e} at step {k_fail} of {steps}"
        )
    return nodes, stages


# -- transient propagation --------------------------------------------------

def propagate_covariance(target, eta, omega0=None, span=1.0, steps=None, scale=1.0,
                         guard=OVERFLOW_GUARD):
    """Integrate the covariance Riccati equation over ``span``.

    Parameters
    ----------
    target : TargetSpec
    eta : float or array
        Signal power, constant or sampled (see ``fine_samples``).
    omega0 : array, optional
        Initial covariance, symmetric positive definite. Defaults to the
        target's initial covariance.
    span : float or (t0, t1)
    steps : int, optional
        Number of RK4 steps; inferred from the samples when omitted.
    scale : float
        Time scaling of the right side (the period in normalized time).
    """
    omega0 = target.initial_covariance() if omega0 is None else _check_spd(omega0, "omega0")
    if omega0.shape != (target.dim, target.dim):
        raise InvalidArgument(f"omega0 must be {target.dim}x{target.dim}")
    fine, steps = fine_samples(eta, steps)
    if steps < 2:
        raise InvalidArgument("steps must be at least 2")
    t0, t1 = _span(span)
    nodes, stages = _integrate(target, fine, steps, omega0, t0, t1, scale, guard)
    return CovarianceTrajectory(
        target_id=target.id, grid=np.linspace(t0, t1, steps + 1), omega=nodes,
        steady=False, scale=scale, stages=stages, fine_eta=fine,
    )


def propagate_transient_sensitivity(target, deta, traj, dT=None, param_ids=None):
    """Derivatives of a covariance trajectory with respect to D parameters.

    ``deta`` holds the signal-power derivatives, shape (D, n) on the same
    grid as ``traj``. The initial condition is zero. ``dT`` optionally
    gives the derivative of the time scale for each parameter.
    """
    deta = np.atleast_2d(np.asarray(deta, dtype=float))
    fine_d, steps = fine_samples(deta, traj.steps)
    if steps != traj.steps or traj.stages is None:
        raise InvalidArgument("sensitivity samples do not match the covariance grid")
    D = fine_d.shape[0]
    dT = np.zeros(D) if dT is None else np.broadcast_to(np.asarray(dT, dtype=float), (D,))
    h = (traj.grid[-1] - traj.grid[0]) / steps
    Z = kernels.forced_rk4(target.A, target.Q, target.G, traj.fine_eta, fine_d, dT,
                           traj.omega, traj.stages, h, traj.scale)
    ids = tuple(range(D)) if param_ids is None else tuple(param_ids)
    return SensitivityTrajectory(target_id=target.id, params=ids, grid=traj.grid, sigma=Z)


# -- periodic steady state --------------------------------------------------

def solve_periodic_riccati(target, eta, T, steps=None, tol=PERIODIC_TOL, max_periods=MAX_PERIODS,
                           omega0=None, accelerate=True, guard=OVERFLOW_GUARD):
    """Periodic solution of the covariance equation in normalized time.

    Iterates the one-period map starting from ``omega0`` (identity by
    default) until ``||W(1) - W(0)||_F <= tol``. With ``accelerate`` the
    iteration takes Newton steps on the fixed-point equation, using the
    period transition matrix to solve for the correction; a step is kept
    only while it is positive definite and reduces the residual, otherwise
    plain iteration continues.
    """
    if not T > 0:
        raise InvalidArgument(f"period must be positive, got {T}")
    fine, steps = fine_samples(eta, steps)
    if not np.any(fine > 0):
        raise NeverVisitedError(target.id)
    L = target.dim
    W = np.eye(L) if omega0 is None else _check_spd(omega0, "omega0")
    h = 1.0 / steps
    use_newton = accelerate
    prev_res = np.inf
    fallback = None
    res = np.inf
    for period in range(1, max_periods + 1):
        nodes, stages = _integrate(target, fine, steps, W, 0.0, 1.0, T, guard)
        end = nodes[-1]
        res = float(np.linalg.norm(end - W))
        if res <= tol:
            return CovarianceTrajectory(
                target_id=target.id, grid=np.linspace(0.0, 1.0, steps + 1), omega=nodes,
                steady=True, scale=T, stages=stages, fine_eta=fine, periods=period, residual=res,
            )
        if fallback is not None and res > prev_res:
            # the Newton step made things worse: resume plain iteration
            W, fallback, use_newton = fallback, None, False
            continue
        prev_res = res
        fallback = None
        if use_newton:
            X = kernels.homogeneous_rk4(target.A, target.G, fine, nodes, stages, h, T)[-1]
            try:
                delta = solve_discrete_lyapunov(X, end - W, target_id=target.id)
            except ContractionError:
                delta = None
            if delta is not None:
                cand = W + delta
                cand = 0.5 * (cand + cand.T)
                if np.linalg.eigvalsh(cand).min() > 0:
                    fallback = end
                    W = cand
                    continue
        W = end
    raise NonConvergenceError(target.id, res, max_periods)


def solve_discrete_lyapunov(X, Z, target_id=None, series_terms=None):
    """Solve L = X L X' + Z for symmetric L.

    ``Z`` may be a single (L, L) matrix or a batch (D, L, L); the batch
    shares one factorization. Small systems use the Kronecker form
    (I - X kron X) vec L = vec Z, larger ones the doubling form of the
    series sum_j X^j Z X'^j.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.asarray(Z, dtype=float)
    single = Z.ndim == 2
    Zb = Z[None] if single else Z
    n = X.shape[0]
    radius = float(np.max(np.abs(np.linalg.eigvals(X)))) if n else 0.0
    if radius >= 1.0 - CONTRACTION_MARGIN:
        raise ContractionError(radius, target_id)
    if series_terms is not None:
        out = _lyapunov_series(X, Zb, series_terms)
    elif n <= KRONECKER_MAX_DIM:
        K = np.eye(n * n) - np.kron(X, X)
        rhs = Zb.reshape(Zb.shape[0], n * n).T
        out = lu_solve(lu_factor(K), rhs).T.reshape(Zb.shape)
    else:
        out = _lyapunov_doubling(X, Zb)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out[0] if single else out


def _lyapunov_series(X, Zb, terms):
    out = np.zeros_like(Zb)
    P = np.eye(X.shape[0])
    for _ in range(terms):
        out += np.einsum("ij,djk,lk->dil", P, Zb, P)
        P = X @ P
    return out


def _lyapunov_doubling(X, Zb, max_iter=64):
    out = Zb.copy()
    Ak = X.copy()
    for _ in range(max_iter):
        out = out + np.einsum("ij,djk,lk->dil", Ak, out, Ak)
        Ak = Ak @ Ak
        if np.linalg.norm(Ak) < 1e-18:
            break
    return out


def integrate_auxiliary(target, steady, deta, dT):
    """Homogeneous transition and zero-start forced responses on a periodic orbit.

    Returns ``(X, Z)`` with X of shape (S + 1, L, L) solving
    dX/dq = T (A - eta W G) X, X(0) = I, and Z of shape (D, S + 1, L, L)
    solving the symmetric forced equation with forcing
    -T deta W G W + dT (A W + W A' + Q - eta W G W).
    """
    if steady.stages is None:
        raise InvalidArgument("steady trajectory lacks RK4 stage states")
    deta = np.atleast_2d(np.asarray(deta, dtype=float))
    fine_d, steps = fine_samples(deta, steady.steps)
    if steps != steady.steps:
        raise InvalidArgument("sensitivity samples do not match the covariance grid")
    D = fine_d.shape[0]
    dT = np.broadcast_to(np.asarray(dT, dtype=float), (D,))
    h = 1.0 / steps
    X = kernels.homogeneous_rk4(target.A, target.G, steady.fine_eta, steady.omega, steady.stages,
                                h, steady.scale)
    Z = kernels.forced_rk4(target.A, target.Q, target.G, steady.fine_eta, fine_d, dT,
                           steady.omega, steady.stages, h, steady.scale)
    return X, Z


def steady_state_sensitivity(target, steady, deta, dT, param_ids=None, assemble=True):
    """Derivatives of the periodic covariance with respect to D parameters.

    ``steady`` is the output of ``solve_periodic_riccati``. With
    ``assemble=False`` the full ``sigma`` array is not formed; the cost
    gradient only needs ``lam``, ``sigma_h`` and ``sigma_zi``.
    """
    X, Z = integrate_auxiliary(target, steady, deta, dT)
    lam = solve_discrete_lyapunov(X[-1], Z[:, -1], target_id=target.id)
    sigma = None
    if assemble:
        sigma = np.einsum("kij,djl,kml->dkim", X, lam, X, optimize=True) + Z
    ids = tuple(range(Z.shape[0])) if param_ids is None else tuple(param_ids)
    return SensitivityTrajectory(target_id=target.id, params=ids, grid=steady.grid, sigma=sigma,
                                 sigma_h=X, sigma_zi=Z, lam=lam)


def steady_trace_gradient(target, steady, deta, dT):
    """Integral over one period of tr(dW/dtheta), one value per parameter.

    Uses tr(X L X') = tr(L X'X), so only the period integral of X'X is
    formed instead of the full sensitivity trajectories.
    """
    X, Z = integrate_auxiliary(target, steady, deta, dT)
    lam = solve_discrete_lyapunov(X[-1], Z[:, -1], target_id=target.id)
    Wx = trapezoid(np.einsum("kji,kjl->kil", X, X), steady.grid, axis=0)
    return np.einsum("dij,ji->d", lam, Wx) + trapezoid(np.trace(Z, axis1=2, axis2=3),
                                                        steady.grid, axis=1)


# -- diagnostics ------------------------------------------------------------

def check_monotonicity(target, eta1, eta2, omega0=None, span=1.0, steps=None, tol=1e-8):
    """Check that more sensing never increases the covariance.

    Requires ``eta1 >= eta2`` pointwise. Returns ``(ok, max_eig)`` where
    ``max_eig`` is the largest eigenvalue of W1 - W2 over all nodes.
    """
    f1, s1 = fine_samples(eta1, steps)
    f2, s2 = fine_samples(eta2, s1)
    if np.any(f1 < f2):
        raise InvalidArgument("eta1 must dominate eta2 at every sample")
    a = propagate_covariance(target, f1, omega0, span, s1)
    b = propagate_covariance(target, f2, omega0, span, s2)
    diff = a.omega - b.omega
    max_eig = float(np.max(np.linalg.eigvalsh(0.5 * (diff + np.swapaxes(diff, 1, 2)))))
    return max_eig <= tol, max_eig


@dataclass
class FilterRun:
    """Monte Carlo statistics of a simulated Kalman-Bucy filter.

    ``mse`` is the empirical mean of e'e over paths at each node and
    ``trace`` the covariance trace from the Riccati equation.
    """

    target_id: int
    times: np.ndarray
    mse: np.ndarray
    trace: np.ndarray
    seed: int
    paths: int
    max_abs_error: float
    states: np.ndarray | None = field(default=None, repr=False)
    estimates: np.ndarray | None = field(default=None, repr=False)

    @property
    def mean_mse(self):
        return float(trapezoid(self.mse, self.times) / (self.times[-1] - self.times[0]))

    @property
    def mean_trace(self):
        return float(trapezoid(self.trace, self.times) / (self.times[-1] - self.times[0]))

    @property
    def relative_deviation(self):
        return abs(self.mean_mse - self.mean_trace) / self.mean_trace


def simulate_kalman_bucy(target, gammas, horizon, paths, seed, omega0=None, steps=None,
                         noise=True, known_start=False, keep_paths=False):
    """Euler-Maruyama simulation of the target state and its Kalman-Bucy filter.

    Parameters
    ----------
    gammas : array (N, S + 1) or (S + 1,)
        Sensing gain of each agent at the grid nodes (constant values are
        broadcast when ``steps`` is given).
    noise : bool
        When False both process and measurement noise are zeroed.
    known_start : bool
        Start the estimate at the true state instead of at zero.
    """
    if not horizon > 0:
        raise InvalidArgument("horizon must be positive")
    if paths < 1:
        raise InvalidArgument("paths must be at least 1")
    g = np.atleast_1d(np.asarray(gammas, dtype=float))
    if g.ndim == 1 and steps is not None and g.size != steps + 1:
        g = np.repeat(g[:, None], steps + 1, axis=1)
    g = np.atleast_2d(g)
    steps = g.shape[1] - 1 if steps is None else steps
    if g.shape[1] != steps + 1 or steps < 1:
        raise InvalidArgument("gains must be sampled at the grid nodes")
    eta = np.sum(g * g, axis=0)
    omega0 = target.initial_covariance() if omega0 is None else _check_spd(omega0, "omega0")
    traj = propagate_covariance(target, eta, omega0, horizon, steps)
    dt = horizon / steps
    L = target.dim
    A, H = target.A, target.H
    Rinv = np.linalg.inv(target.R)
    m = H.shape[0]
    rng = np.random.default_rng(seed)
    Lq = np.linalg.cholesky(target.Q)
    Lr = np.linalg.cholesky(target.R)
    Lw = np.linalg.cholesky(omega0)
    phi = rng.standard_normal((paths, L)) @ Lw.T
    est = phi.copy() if known_start else np.zeros((paths, L))
    mse = np.empty(steps + 1)
    err = est - phi
    mse[0] = np.mean(np.sum(err * err, axis=1))
    max_err = float(np.max(np.abs(err)))
    N = g.shape[0]
    sq = np.sqrt(dt)
    keep = (np.empty((steps + 1, paths, L)), np.empty((steps + 1, paths, L))) if keep_paths else None
    if keep:
        keep[0][0], keep[1][0] = phi, est
    for k in range(steps):
        W = traj.omega[k]
        dw = rng.standard_normal((paths, L)) @ Lq.T * sq
        dv = rng.standard_normal((N, paths, m)) @ Lr.T * sq
        if not noise:
            dw = np.zeros_like(dw)
            dv = np.zeros_like(dv)
        innov = np.zeros((paths, L))
        for j in range(N):
            gj = g[j, k]
            if gj == 0.0:
                continue
            dz = gj * (phi @ H.T) * dt + dv[j]
            innov += gj * ((dz - gj * (est @ H.T) * dt) @ Rinv.T) @ H
        est = est + (est @ A.T) * dt + innov @ W.T
        phi = phi + (phi @ A.T) * dt + dw
        err = est - phi
        mse[k + 1] = np.mean(np.sum(err * err, axis=1))
        max_err = max(max_err, float(np.max(np.abs(err))))
        if keep:
            keep[0][k + 1], keep[1][k + 1] = phi, est
    return FilterRun(
        target_id=target.id, times=traj.grid, mse=mse, trace=traj.trace(), seed=seed,
        paths=paths, max_abs_error=max_err,
        states=keep[0] if keep else None, estimates=keep[1] if keep else None,
    )
