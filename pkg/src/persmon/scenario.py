"""Problem data: targets, agents, and the distance-based sensing model.

Targets carry linear stochastic internal states observed through a
distance-dependent gain. The sensing gain of agent ``j`` on target ``i`` is

    gamma(alpha) = sqrt(1 - |alpha| / r)   if |alpha| < r, else 0

and the aggregate signal power of a target is the sum of squared gains
over all agents.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, ScenarioError

DETECTABILITY_TOL = 1e-8


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _is_spd(M):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    if not np.allclose(M, M.T, atol=1e-12, rtol=1e-10):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def is_detectable(A, H, tol=DETECTABILITY_TOL):
    """PBH test: rank [A - lam I; H] == L for every eigenvalue with Re(lam) >= 0."""
    A = np.asarray(A, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    L = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < 0:
            continue
        M = np.vstack([A - lam * np.eye(L), H])
        sv = np.linalg.svd(M, compute_uv=False)
        if np.sum(sv > tol) < L:
            return False
    return True


@dataclass(frozen=True, eq=False)
class TargetSpec:
    id: int
    position: np.ndarray
    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    radii: np.ndarray
    omega0: np.ndarray | None = None

    def __post_init__(self):
        where = f"targets[{self.id}]"
        pos = np.atleast_1d(np.asarray(self.position, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
        L = A.shape[0]
        if A.shape != (L, L):
            raise ScenarioError(f"{where}.A", f"must be square, got shape {A.shape}")
        if Q.shape != (L, L):
            raise ScenarioError(f"{where}.Q", f"must be {L}x{L}, got shape {Q.shape}")
        if H.ndim != 2 or H.shape[1] != L:
            raise ScenarioError(f"{where}.H", f"must have {L} columns, got shape {H.shape}")
        m = H.shape[0]
        if R.shape != (m, m):
            raise ScenarioError(f"{where}.R", f"must be {m}x{m}, got shape {R.shape}")
        if not _is_spd(Q):
            raise ScenarioError(f"{where}.Q", "must be symmetric positive definite")
        if not _is_spd(R):
            raise ScenarioError(f"{where}.R", "must be symmetric positive definite")
        if not is_detectable(A, H):
            raise ScenarioError(f"{where}.A", "pair (A, H) is not detectable")
        if np.any(~np.isfinite(radii)) or np.any(radii <= 0):
            raise ScenarioError(f"{where}.radius", "radii must be positive")
        omega0 = self.omega0
        if omega0 is not None:
            omega0 = np.atleast_2d(np.asarray(omega0, dtype=float))
            if not _is_spd(omega0):
                raise ScenarioError(f"{where}.omega0", "must be symmetric positive definite")
            omega0 = _frozen(omega0)
        for name, val in (("position", pos), ("A", A), ("Q", Q), ("H", H), ("R", R), ("radii", radii)):
            object.__setattr__(self, name, _frozen(val))
        object.__setattr__(self, "omega0", omega0)
        G = H.T @ np.linalg.solve(R, H)
        object.__setattr__(self, "G", _frozen(0.5 * (G + G.T)))

    @property
    def dim(self):
        return self.A.shape[0]

    def initial_covariance(self):
        return np.eye(self.dim) if self.omega0 is None else np.array(self.omega0)


@dataclass(frozen=True)
class AgentSpec:
    id: int
    u_max: float = math.inf

    def __post_init__(self):
        if not (self.u_max > 0):
            raise ScenarioError(f"agents[{self.id}].u_max", "must be positive or 'unbounded'")

    @property
    def bounded(self):
        return math.isfinite(self.u_max)


@dataclass(frozen=True, eq=False)
class Scenario:
    dimension: int
    targets: tuple
    agents: tuple
    beta: float = 0.0
    mode: str = "steady"
    horizon: float | None = None

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ScenarioError("dimension", "must be 1, 2 or 3")
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.targets:
            raise ScenarioError("targets", "at least one target is required")
        if not self.agents:
            raise ScenarioError("agents", "at least one agent is required")
        if not (self.beta >= 0):
            raise ScenarioError("beta", "must be nonnegative")
        if self.mode not in ("steady", "transient"):
            raise ScenarioError("mode", "must be 'steady' or 'transient'")
        if self.mode == "transient" and not (self.horizon is not None and self.horizon > 0):
            raise ScenarioError("horizon", "transient mode needs a positive horizon")
        N = len(self.agents)
        for i, t in enumerate(self.targets):
            if t.position.shape != (self.dimension,):
                raise ScenarioError(f"targets[{i}].position", f"must have length {self.dimension}")
            if t.radii.shape not in ((1,), (N,)):
                raise ScenarioError(f"targets[{i}].radius", f"scalar or list of {N} radii expected")
            if t.radii.shape == (1,) and N != 1:
                object.__setattr__(t, "radii", _frozen(np.full(N, t.radii[0])))

    @property
    def n_targets(self):
        return len(self.targets)

    @property
    def n_agents(self):
        return len(self.agents)

    def positions(self):
        return np.array([t.position for t in self.targets])

    def radius_matrix(self):
        """Sensing radii as an (M, N) array."""
        return np.array([t.radii for t in self.targets])

    def u_max(self):
        return np.array([a.u_max for a in self.agents])

    def replace(self, **changes):
        kw = dict(dimension=self.dimension, targets=self.targets, agents=self.agents,
                  beta=self.beta, mode=self.mode, horizon=self.horizon)
        kw.update(changes)
        return Scenario(**kw)


@dataclass
class EtaProfile:
    """Signal power and its parameter derivatives sampled on a grid.

    ``eta`` has shape (M, n) and ``deta`` shape (M, D, n) where ``n`` is
    the number of grid points and ``D`` the number of parameters. Profiles
    used by the integrators are sampled on the fine grid of ``2S + 1``
    points (RK4 nodes and step midpoints), so ``n`` is odd and ``steps``
    is ``S``.
    """

    grid: np.ndarray
    eta: np.ndarray
    deta: np.ndarray = field(default=None)

    @property
    def size(self):
        return self.grid.shape[0] - 1

    @property
    def steps(self):
        return (self.grid.shape[0] - 1) // 2

    def nodes(self):
        """Node samples (M, S + 1), dropping the step midpoints."""
        return self.eta[:, ::2]


# -- sensing model ----------------------------------------------------------

def gamma_eval(displacement, radius):
    if not (radius > 0):
        raise InvalidArgument(f"radius must be positive, got {radius}")
    d = float(np.linalg.norm(np.atleast_1d(displacement)))
    if d >= radius:
        return 0.0
    return math.sqrt(1.0 - d / radius)


def gamma_sq_gradient(s, x, radius):
    """Gradient of gamma^2 = 1 - |s - x| / r with respect to the agent position ``s``.

    Zero outside the sensing disc and at ``s == x`` (a valid subgradient).
    """
    if not (radius > 0):
        raise InvalidArgument(f"radius must be positive, got {radius}")
    diff = np.atleast_1d(np.asarray(s, dtype=float) - np.asarray(x, dtype=float))
    d = float(np.linalg.norm(diff))
    if d == 0.0 or d >= radius:
        return np.zeros_like(diff)
    return -diff / (radius * d)


def eta_eval(scenario, i, positions):
    if not 0 <= i < scenario.n_targets:
        raise InvalidArgument(f"target index {i} out of range")
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape != (scenario.n_agents, scenario.dimension):
        raise InvalidArgument(
            f"expected positions of shape ({scenario.n_agents}, {scenario.dimension}), got {positions.shape}"
        )
    t = scenario.targets[i]
    return sum(gamma_eval(positions[j] - t.position, t.radii[j]) ** 2 for j in range(scenario.n_agents))


def sensing_terms(scenario, positions):
    """Vectorized gamma^2 and its position gradient.

    positions: (n, N, P). Returns ``g2`` of shape (n, M, N) and ``grad`` of
    shape (n, M, N, P).
    """
    x = scenario.positions()                      # (M, P)
    r = scenario.radius_matrix()                  # (M, N)
    disp = positions[:, None, :, :] - x[None, :, None, :]
    d = np.sqrt(np.sum(disp * disp, axis=-1))     # (n, M, N)
    inside = d < r[None]
    g2 = np.where(inside, 1.0 - d / r[None], 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(inside & (d > 0), -1.0 / (r[None] * d), 0.0)
    grad = disp * scale[..., None]
    return g2, grad


def build_eta_profile(scenario, evaluator, grid, exact_steps=False):
    """Sample signal power and its chain-rule derivatives on ``grid``.

    ``evaluator(grid)`` returns agent positions (n, N, P) and their
    parameter Jacobian (n, N, P, D).

    With ``exact_steps`` the grid is read as RK4 nodes and midpoints. In
    every step where an agent crosses a sensing radius the midpoint sample
    is replaced by the value for which Simpson's rule reproduces the exact
    integral of eta over the step. Signal power has a derivative jump at
    the radius, and plain point samples there cost the integrator two
    orders of accuracy. A corrected midpoint can be slightly negative
    when the crossing sits next to a node; it is bounded below by
    ``-(eta_0 + eta_1) / 4``, which is small there.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise InvalidArgument("grid must contain at least two points")
    positions, jac = evaluator(grid)
    g2, grad = sensing_terms(scenario, positions)
    eta = g2.sum(axis=2).T                        # (M, n)
    deta = np.einsum("nmjp,njpd->mdn", grad, jac, optimize=True)
    eta, deta = np.ascontiguousarray(eta), np.ascontiguousarray(deta)
    if exact_steps:
        if grid.size % 2 == 0:
            raise InvalidArgument("exact_steps needs a grid of 2S + 1 points")
        _correct_crossing_steps(scenario, evaluator, grid, positions, eta, deta)
    return EtaProfile(grid=grid, eta=eta, deta=deta)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)
_BISECTIONS = 60


def _radius_gap(scenario, evaluator, t, target, agent):
    pos = evaluator(t)[0][np.arange(t.size), agent]
    x = scenario.positions()[target]
    r = scenario.radius_matrix()[target, agent]
    return np.sqrt(np.sum((pos - x) ** 2, axis=-1)) - r


def _crossing_times(scenario, evaluator, a, b, target, agent):
    """Vectorized bisection for d(t) = r on brackets [a, b]."""
    fa = _radius_gap(scenario, evaluator, a, target, agent)
    a, b = a.copy(), b.copy()
    for _ in range(_BISECTIONS):
        m = 0.5 * (a + b)
        fm = _radius_gap(scenario, evaluator, m, target, agent)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, m, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, m)
    return 0.5 * (a + b)


def _correct_crossing_steps(scenario, evaluator, grid, positions, eta, deta):
    x = scenario.positions()
    r = scenario.radius_matrix()
    d = np.sqrt(np.sum((positions[:, None, :, :] - x[None, :, None, :]) ** 2, axis=-1))
    inside = d < r[None]                          # (n, M, N)
    flips = inside[1:] != inside[:-1]             # (n - 1, M, N) per half step
    if not flips.any():
        return
    # crossing times per half step, grouped by (target, agent) for bisection
    breaks = {}
    h_idx, m_idx, j_idx = np.nonzero(flips)
    for i, j in set(zip(m_idx.tolist(), j_idx.tolist())):
        sel = (m_idx == i) & (j_idx == j)
        hs = h_idx[sel]
        ts = _crossing_times(scenario, evaluator, grid[hs], grid[hs + 1], i, j)
        for hh, t in zip(hs.tolist(), ts.tolist()):
            breaks.setdefault((i, hh // 2), []).append(t)
    keys = sorted(breaks)
    # Gauss-Legendre points on every smooth piece of every affected step
    pts, wts, owner = [], [], []
    for n_key, (i, k) in enumerate(keys):
        edges = np.concatenate([[grid[2 * k]], np.sort(breaks[(i, k)]), [grid[2 * k + 2]]])
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            pts.append(lo + half * (_GL_NODES + 1.0))
            wts.append(half * _GL_WEIGHTS)
            owner.append(np.full(_GL_NODES.size, n_key))
    pts, wts, owner = np.concatenate(pts), np.concatenate(wts), np.concatenate(owner)
    qpos, qjac = evaluator(pts)
    g2, grad = sensing_terms(scenario, qpos)
    targets = np.array([i for i, _ in keys])[owner]
    rows = np.arange(pts.size)
    q_eta = g2[rows, targets].sum(axis=1)                           # (nq,)
    q_deta = np.einsum("njp,njpd->nd", grad[rows, targets], qjac)   # (nq, D)
    n_keys = len(keys)
    integral = np.bincount(owner, weights=wts * q_eta, minlength=n_keys)
    dintegral = np.zeros((n_keys, q_deta.shape[1]))
    np.add.at(dintegral, owner, wts[:, None] * q_deta)
    for n_key, (i, k) in enumerate(keys):
        h = grid[2 * k + 2] - grid[2 * k]
        mid = (6.0 * integral[n_key] / h - eta[i, 2 * k] - eta[i, 2 * k + 2]) / 4.0
        eta[i, 2 * k + 1] = mid
        deta[i, :, 2 * k + 1] = (6.0 * dintegral[n_key] / h - deta[i, :, 2 * k] - deta[i, :, 2 * k + 2]) / 4.0


# -- scenario documents -----------------------------------------------------

def _matrix(doc, field_name, where):
    try:
        val = doc[field_name]
    except KeyError:
        raise ScenarioError(f"{where}.{field_name}", "missing") from None
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{field_name}", "must be a number or nested numeric array") from None
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{where}.{field_name}", "must be finite")
    return np.atleast_2d(arr)


def scenario_from_dict(doc):
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "scenario document must be an object")
    for key in ("dimension", "targets", "agents"):
        if key not in doc:
            raise ScenarioError(key, "missing")
    try:
        dim = int(doc["dimension"])
    except (TypeError, ValueError):
        raise ScenarioError("dimension", "must be an integer") from None
    agents_doc = doc["agents"]
    if not isinstance(agents_doc, list):
        raise ScenarioError("agents", "must be a list")
    agents = []
    for j, a in enumerate(agents_doc):
        u = a.get("u_max", "unbounded") if isinstance(a, dict) else a
        if u == "unbounded" or u is None:
            u = math.inf
        try:
            u = float(u)
        except (TypeError, ValueError):
            raise ScenarioError(f"agents[{j}].u_max", "must be a positive number or 'unbounded'") from None
        agents.append(AgentSpec(id=j, u_max=u))
    targets_doc = doc["targets"]
    if not isinstance(targets_doc, list):
        raise ScenarioError("targets", "must be a list")
    targets = []
    for i, t in enumerate(targets_doc):
        where = f"targets[{i}]"
        if not isinstance(t, dict):
            raise ScenarioError(where, "must be an object")
        pos = _matrix(t, "position", where).ravel()
        if "radius" not in t:
            raise ScenarioError(f"{where}.radius", "missing")
        radius = np.atleast_1d(np.array(t["radius"], dtype=float))
        omega0 = _matrix(t, "omega0", where) if "omega0" in t else None
        targets.append(TargetSpec(
            id=i, position=pos,
            A=_matrix(t, "A", where), Q=_matrix(t, "Q", where),
            H=_matrix(t, "H", where), R=_matrix(t, "R", where),
            radii=radius, omega0=omega0,
        ))
    mode = doc.get("mode", "steady")
    horizon = doc.get("horizon")
    beta = doc.get("beta", 0.0)
    try:
        beta = float(beta)
    except (TypeError, ValueError):
        raise ScenarioError("beta", "must be a number") from None
    return Scenario(dimension=dim, targets=targets, agents=agents, beta=beta, mode=mode,
                    horizon=None if horizon is None else float(horizon))


def scenario_to_dict(sc):
    def mat(a):
        return np.asarray(a).tolist()

    targets = []
    for t in sc.targets:
        r = t.radii
        entry = {
            "position": mat(t.position),
            "A": mat(t.A), "Q": mat(t.Q), "H": mat(t.H), "R": mat(t.R),
            "radius": float(r[0]) if np.all(r == r[0]) else mat(r),
        }
        if t.omega0 is not None:
            entry["omega0"] = mat(t.omega0)
        targets.append(entry)
    doc = {
        "dimension": sc.dimension,
        "beta": sc.beta,
        "mode": sc.mode,
        "targets": targets,
        "agents": [{"u_max": a.u_max if a.bounded else "unbounded"} for a in sc.agents],
    }
    if sc.horizon is not None:
        doc["horizon"] = sc.horizon
    return doc


def load_scenario(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError("scenario", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("scenario", f"invalid JSON: {exc}") from None
    return scenario_from_dict(doc)


def uniform_scenario(positions, A, Q, H, R, radius, n_agents, *, beta=0.0, mode="steady",
                     horizon=None, u_max=math.inf):
    """Scenario with identical target dynamics and a shared sensing radius."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    dim = positions.shape[1]
    targets = [TargetSpec(id=i, position=p, A=A, Q=Q, H=H, R=R, radii=[radius] * n_agents)
               for i, p in enumerate(positions)]
    if np.isscalar(u_max):
        u_max = [u_max] * n_agents
    agents = [AgentSpec(id=j, u_max=float(u)) for j, u in enumerate(u_max)]
    return Scenario(dimension=dim, targets=targets, agents=agents, beta=beta, mode=mode,
                    horizon=horizon)


def isolation_metrics(scenario):
    """Return (r_max, d_min) for the isolated-target definitions.

    d_min = min pairwise target distance - 2 r_max; positive iff every
    target is isolated.
    """
    x = scenario.positions()
    r_max = float(np.max(scenario.radius_matrix()))
    M = len(x)
    if M < 2:
        return r_max, math.inf
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    d[np.diag_indices(M)] = np.inf
    return r_max, float(d.min() - 2 * r_max)


__all__: Sequence[str] = [
    "TargetSpec", "AgentSpec", "Scenario", "EtaProfile",
    "gamma_eval", "gamma_sq_gradient", "eta_eval", "build_eta_profile", "sensing_terms",
    "is_detectable", "scenario_from_dict", "scenario_to_dict", "load_scenario",
    "uniform_scenario", "isolation_metrics",
]
