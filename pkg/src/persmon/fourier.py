"""Truncated Fourier series trajectories.

Along every axis p agent j follows

    s(q) = s0 + sum_k a_k sin(2 pi f_k q) + b_k (cos(2 pi f_k q) - 1),

with integer frequencies f_k, so s(0) = s(1) = s0 for any coefficients.
The physical velocity is ds/dq / T and the period-averaged control effort
has the closed form sum (2 pi f_k)^2 (a_k^2 + b_k^2) / (2 T^2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import InvalidArgument

T_MIN = 1e-3
DEFAULT_HARMONICS = 5


@dataclass(frozen=True, eq=False)
class ParamsFourier:
    """Period, harmonics and per-agent coefficients.

    ``s0`` has shape (N, P); ``a`` and ``b`` have shape (N, P, K).
    """

    T: float
    frequencies: np.ndarray
    s0: np.ndarray
    a: np.ndarray
    b: np.ndarray

    kind = "fourier"

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if f.ndim != 1 or np.any(f < 1) or np.any(f != np.round(f)) or np.any(np.diff(f) <= 0):
            raise InvalidArgument("frequencies must be strictly increasing integers >= 1")
        s0 = np.atleast_2d(np.asarray(self.s0, dtype=float))
        a = np.asarray(self.a, dtype=float).reshape(s0.shape + (f.size,))
        b = np.asarray(self.b, dtype=float).reshape(s0.shape + (f.size,))
        for name, val in (("frequencies", f), ("s0", s0), ("a", a), ("b", b)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "T", float(self.T))

    @property
    def n_agents(self):
        return self.s0.shape[0]

    @property
    def dim(self):
        return self.s0.shape[1]

    @property
    def n_harmonics(self):
        return self.frequencies.size

    @property
    def size(self):
        return 1 + self.n_agents * self.dim * (1 + 2 * self.n_harmonics)

    def index(self, j, p):
        """Start of the (agent j, axis p) block: s0, then a_1..K, then b_1..K."""
        return 1 + (j * self.dim + p) * (1 + 2 * self.n_harmonics)

    def to_vector(self):
        blocks = np.concatenate([self.s0[..., None], self.a, self.b], axis=2)
        return np.concatenate([[self.T], blocks.ravel()])

    def from_vector(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise InvalidArgument(f"expected {self.size} parameters, got {vec.shape}")
        K = self.n_harmonics
        blocks = vec[1:].reshape(self.n_agents, self.dim, 1 + 2 * K)
        return ParamsFourier(T=vec[0], frequencies=self.frequencies, s0=blocks[..., 0],
                             a=blocks[..., 1:1 + K], b=blocks[..., 1 + K:])

    def labels(self):
        out = ["T"]
        for j in range(self.n_agents):
            for p in range(self.dim):
                out.append(f"agent{j}.axis{p}.s0")
                out += [f"agent{j}.axis{p}.a{int(f)}" for f in self.frequencies]
                out += [f"agent{j}.axis{p}.b{int(f)}" for f in self.frequencies]
        return out

    def replace(self, **changes):
        kw = dict(T=self.T, frequencies=self.frequencies, s0=self.s0, a=self.a, b=self.b)
        kw.update(changes)
        return ParamsFourier(**kw)


def _basis(freqs, q):
    w = 2.0 * np.pi * np.asarray(freqs, dtype=float)
    arg = np.multiply.outer(np.atleast_1d(np.asarray(q, dtype=float)), w)
    return w, np.sin(arg), np.cos(arg)


def fourier_position(params, j, q):
    """Position of agent j at normalized time(s) q, shape (n, P) (or (P,) for scalar q)."""
    if not 0 <= j < params.n_agents:
        raise InvalidArgument(f"agent index {j} out of range")
    _, sn, cs = _basis(params.frequencies, q)
    s = params.s0[j][None, :] + sn @ params.a[j].T + (cs - 1.0) @ params.b[j].T
    return s[0] if np.ndim(q) == 0 else s


def fourier_velocity(params, j, q):
    """ds/dq of agent j, shape (n, P)."""
    w, sn, cs = _basis(params.frequencies, q)
    v = (cs * w) @ params.a[j].T - (sn * w) @ params.b[j].T
    return v[0] if np.ndim(q) == 0 else v


def fourier_acceleration(params, j, q):
    """d^2 s / dq^2 of agent j, shape (n, P)."""
    w, sn, cs = _basis(params.frequencies, q)
    acc = -(sn * w * w) @ params.a[j].T - (cs * w * w) @ params.b[j].T
    return acc[0] if np.ndim(q) == 0 else acc


def fourier_position_gradients(params, j, p, q):
    """Partials of s_j^p(q) with respect to the (j, p) coefficients.

    Returns a dict with ``a`` and ``b`` of shape (n, K) and ``s0`` and ``T``
    of shape (n,). Partials with respect to other agents or axes vanish.
    """
    if not 0 <= p < params.dim:
        raise InvalidArgument(f"axis index {p} out of range")
    _, sn, cs = _basis(params.frequencies, q)
    n = sn.shape[0]
    return {"a": sn, "b": cs - 1.0, "s0": np.ones(n), "T": np.zeros(n)}


def effort_and_gradients(params):
    """Period-averaged control effort and its gradient in vector layout."""
    if not params.T > 0:
        raise InvalidArgument("period must be positive")
    w2 = (2.0 * np.pi * params.frequencies) ** 2
    T = params.T
    energy = params.a ** 2 + params.b ** 2
    effort = float(np.sum(w2 * energy) / (2.0 * T * T))
    K = params.n_harmonics
    grad = np.zeros(params.size)
    grad[0] = -float(np.sum(w2 * energy)) / T ** 3
    blocks = grad[1:].reshape(params.n_agents, params.dim, 1 + 2 * K)
    blocks[..., 1:1 + K] = w2 * params.a / (T * T)
    blocks[..., 1 + K:] = w2 * params.b / (T * T)
    return effort, grad


class FourierModel:
    """Evaluates positions and parameter Jacobians for the optimizer."""

    def __init__(self, scenario):
        self.scenario = scenario

    def positions(self, params, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return np.stack([fourier_position(params, j, q) for j in range(params.n_agents)], axis=1)

    def velocities(self, params, q):
        """ds/dq, shape (n, N, P)."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return np.stack([fourier_velocity(params, j, q) for j in range(params.n_agents)], axis=1)

    def jacobian(self, params, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        n, N, P, K = q.size, params.n_agents, params.dim, params.n_harmonics
        _, sn, cs = _basis(params.frequencies, q)
        jac = np.zeros((n, N, P, params.size))
        for j in range(N):
            for p in range(P):
                i0 = params.index(j, p)
                jac[:, j, p, i0] = 1.0
                jac[:, j, p, i0 + 1:i0 + 1 + K] = sn
                jac[:, j, p, i0 + 1 + K:i0 + 1 + 2 * K] = cs - 1.0
        return self.positions(params, q), jac

    def transient_jacobian(self, params, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q = t / params.T
        pos, jac = self.jacobian(params, q)
        jac[..., 0] += self.velocities(params, q) * (-q / params.T)[:, None, None]
        return pos, jac

    def event_signature(self, params, q):
        return np.zeros(0, dtype=bool)

    def steady_effort(self, params):
        return effort_and_gradients(params)

    def transient_effort(self, params, horizon, times):
        """Trapezoidal integral of sum_j |u_j|^2 over ``times`` and its gradient."""
        t = np.asarray(times, dtype=float)
        T = params.T
        q = t / T
        w, sn, cs = _basis(params.frequencies, q)
        K = params.n_harmonics
        value = 0.0
        grad = np.zeros(params.size)
        for j in range(params.n_agents):
            v = fourier_velocity(params, j, q)
            acc = fourier_acceleration(params, j, q)
            u = v / T
            value += float(trapezoid(np.sum(u * u, axis=1), t))
            du_dT = -(v + q[:, None] * acc) / (T * T)
            grad[0] += float(trapezoid(np.sum(2.0 * u * du_dT, axis=1), t))
            for p in range(params.dim):
                i0 = params.index(j, p)
                weight = 2.0 * u[:, p][:, None] / T
                grad[i0 + 1:i0 + 1 + K] = trapezoid(weight * cs * w, t, axis=0)
                grad[i0 + 1 + K:i0 + 1 + 2 * K] = trapezoid(-weight * sn * w, t, axis=0)
        return value, grad

    def project(self, params, periodic=True):
        if params.T >= T_MIN:
            return params
        return params.replace(T=T_MIN)
