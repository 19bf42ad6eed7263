"""Initial trajectories that visit every target.

A min-max multiple traveling salesman tour is computed with a genetic
algorithm; the tours are then turned into dwell/move parameters on a line
or into Fourier curves that pass within a fraction of the sensing radius of
every scheduled target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from . import kernels
from .errors import InfeasibleFitError, InvalidArgument
from .fourier import DEFAULT_HARMONICS, ParamsFourier, fourier_position
from .traj1d import Params1D, _speed

DEFAULT_DELTA = 0.1
FIT_TOL = 1e-8
# waypoint discs are shrunk by this much inside the solver so the
# independent re-check passes without relying on solver tolerances
FIT_MARGIN = 1e-7


@dataclass
class GAConfig:
    population: int = 100
    generations: int = 3000
    elite_fraction: float = 0.1
    tournament: int = 3
    p_swap: float = 0.3
    p_reverse: float = 0.3
    p_cut: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise InvalidArgument("population must be at least 2")
        if self.generations < 0:
            raise InvalidArgument("generations must be nonnegative")
        if not 0 <= self.elite_fraction < 1:
            raise InvalidArgument("elite_fraction must lie in [0, 1)")


@dataclass
class Schedule:
    """Cyclic per-agent visit orders.

    ``tours[j]`` lists target indices in visit order, ``cumulative[j][m]`` is
    the distance travelled when reaching the m-th target (0 for the first)
    and ``lengths[j]`` the closed tour length. ``history`` holds the best
    max-tour length after each GA generation (generation 0 first).
    """

    tours: list
    cumulative: list
    lengths: np.ndarray
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_tours(cls, tours, positions, history=None):
        pos = np.asarray(positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        tours = [np.asarray(t, dtype=int) for t in tours]
        cumulative, lengths = [], []
        for t in tours:
            if t.size == 0:
                cumulative.append(np.zeros(0))
                lengths.append(0.0)
                continue
            pts = pos[t]
            legs = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            cumulative.append(np.concatenate([[0.0], np.cumsum(legs)]))
            lengths.append(float(legs.sum() + np.linalg.norm(pts[-1] - pts[0])))
        hist = np.zeros(0) if history is None else np.asarray(history, dtype=float)
        return cls(tours=tours, cumulative=cumulative, lengths=np.array(lengths), history=hist)

    @property
    def n_agents(self):
        return len(self.tours)

    @property
    def max_length(self):
        return float(self.lengths.max(initial=0.0))

    def covered(self):
        """Sorted target indices that appear in some tour."""
        if not self.tours:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate(self.tours))


# -- genetic algorithm --------------------------------------------------------

def _ranking(lengths):
    """Order by max tour length, ties broken by total length."""
    return np.lexsort((lengths.sum(axis=1), lengths.max(axis=1)))


def _order_crossover(p1, p2, rng):
    M = p1.size
    i, k = sorted(rng.choice(M + 1, size=2, replace=False))
    child = np.empty(M, dtype=p1.dtype)
    child[i:k] = p1[i:k]
    keep = np.ones(M, dtype=bool)
    keep[p1[i:k]] = False
    rest = p2[keep[p2]]
    child[:i] = rest[:i]
    child[k:] = rest[i:]
    return child


def _random_cuts(M, N, rng):
    return np.sort(rng.choice(np.arange(1, M), size=N - 1, replace=False))


def _bounds(cuts, M):
    return np.concatenate([[0], cuts, [M]])


def mtsp_solve(positions, n_agents, config=None):
    """Min-max closed tours covering all targets.

    Parameters
    ----------
    positions : array_like, shape (M,) or (M, P)
        Target positions.
    n_agents : int
        Number of agents N.
    config : GAConfig, optional
        Population, generations, mutation rates and seed.

    Returns
    -------
    Schedule
        One tour per agent. With N >= M every agent gets a single target
        (agents beyond M repeat targets cyclically).
    """
    cfg = config or GAConfig()
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    M, N = pos.shape[0], int(n_agents)
    if M < 1 or N < 1:
        raise InvalidArgument("need at least one target and one agent")
    if N >= M:
        tours = [[j % M] for j in range(N)]
        return Schedule.from_tours(tours, pos, history=np.zeros(cfg.generations + 1))

    rng = np.random.default_rng(cfg.seed)
    dist = cdist(pos, pos)
    n = cfg.population
    perms = np.array([rng.permutation(M) for _ in range(n)], dtype=np.int64)
    cuts = np.array([_random_cuts(M, N, rng) for _ in range(n)], dtype=np.int64).reshape(n, N - 1)
    n_elite = max(1, int(round(cfg.elite_fraction * n)))

    def score(perms, cuts):
        bounds = np.concatenate(
            [np.zeros((perms.shape[0], 1), dtype=np.int64), cuts,
             np.full((perms.shape[0], 1), M, dtype=np.int64)], axis=1)
        return kernels.tour_lengths(perms, bounds, dist)

    lengths = score(perms, cuts)
    history = np.empty(cfg.generations + 1)
    order = _ranking(lengths)
    history[0] = lengths[order[0]].max()

    for g in range(1, cfg.generations + 1):
        maxlen = lengths.max(axis=1)
        new_perms = np.empty_like(perms)
        new_cuts = np.empty_like(cuts)
        new_perms[:n_elite] = perms[order[:n_elite]]
        new_cuts[:n_elite] = cuts[order[:n_elite]]
        for c in range(n_elite, n):
            pair = []
            for _ in range(2):
                entrants = rng.integers(0, n, size=cfg.tournament)
                pair.append(entrants[np.argmin(maxlen[entrants])])
            child = _order_crossover(perms[pair[0]], perms[pair[1]], rng)
            ccuts = cuts[pair[0]].copy()
            if rng.random() < cfg.p_swap:
                i, k = rng.choice(M, size=2, replace=False)
                child[i], child[k] = child[k], child[i]
            if rng.random() < cfg.p_reverse:
                i, k = sorted(rng.choice(M + 1, size=2, replace=False))
                child[i:k] = child[i:k][::-1]
            if N > 1 and rng.random() < cfg.p_cut:
                ccuts = _random_cuts(M, N, rng)
            new_perms[c] = child
            new_cuts[c] = ccuts
        perms, cuts = new_perms, new_cuts
        lengths = score(perms, cuts)
        order = _ranking(lengths)
        history[g] = lengths[order[0]].max()

    best = order[0]
    bounds = _bounds(cuts[best], M)
    tours = [perms[best, bounds[j]:bounds[j + 1]] for j in range(N)]
    return Schedule.from_tours(tours, pos, history=history)


# -- conversion to line parameters ----------------------------------------------

def _merged_moves(xs):
    """Alternating move lengths (right first) of the closed path through xs."""
    legs = np.diff(np.concatenate([xs, xs[:1]]))
    moves = []
    for leg in legs:
        if leg == 0.0:
            continue
        if moves and np.sign(moves[-1]) == np.sign(leg):
            moves[-1] += leg
        else:
            moves.append(leg)
    return np.abs(np.array(moves))


def schedule_to_params_1d(schedule, scenario, n_moves=None):
    """Dwell/move parameters tracing each tour at full speed.

    Each tour is rotated to start at its leftmost target, consecutive legs
    in the same direction are merged into one move, T is the longest tour
    time and shorter tours dwell at the start to fill the period.
    """
    if scenario.dimension != 1:
        raise InvalidArgument("schedule_to_params_1d needs a one-dimensional scenario")
    if schedule.n_agents != scenario.n_agents:
        raise InvalidArgument("schedule and scenario disagree on the number of agents")
    x = scenario.positions()[:, 0]
    speeds = np.array([_speed(u) for u in scenario.u_max()])
    starts, moves = [], []
    for tour in schedule.tours:
        xs = x[np.asarray(tour, dtype=int)]
        if xs.size == 0:
            raise InvalidArgument("every agent needs at least one target")
        k = int(np.argmin(xs))
        xs = np.roll(xs, -k)
        starts.append(xs[0])
        moves.append(_merged_moves(xs))
    need = max(max(m.size for m in moves), 1)
    P = need if n_moves is None else int(n_moves)
    if P < need:
        raise InvalidArgument(f"{need} moves are needed but only {P} were requested")
    times = np.array([m.sum() for m in moves]) / speeds
    T = float(times.max()) if times.max() > 0 else 1.0
    tau = np.zeros((len(moves), P))
    omega = np.zeros((len(moves), P))
    for j, m in enumerate(moves):
        tau[j, :m.size] = m / (speeds[j] * T)
        omega[j, 0] = max(0.0, 1.0 - tau[j].sum())
    return Params1D(T=T, s0=np.array(starts), tau=tau, omega=omega)


# -- Fourier waypoint fit ------------------------------------------------------

def _waypoint_basis(freqs, q):
    w = 2.0 * np.pi * np.asarray(freqs, dtype=float)
    arg = np.multiply.outer(q, w)
    return np.concatenate([np.sin(arg), np.cos(arg) - 1.0], axis=1)


def _fit_agent(q, offsets, rho, freqs, dim, max_rounds):
    """Weighted-L1 minimal coefficients with waypoint discs; returns (P, 2K).

    Kelley cutting planes: each round solves an LP over an outer polyhedral
    approximation of the discs and adds the tangent cut of every violated
    disc at the current point. Returns None when the LP becomes infeasible.
    """
    K = freqs.size
    B = _waypoint_basis(freqs, q)                     # (W, 2K)
    W = q.size
    nc = dim * 2 * K
    weights = np.tile(np.concatenate([freqs, freqs]), dim)
    obj = np.concatenate([weights, weights])

    def residual(c):
        return c.reshape(dim, 2 * K) @ B.T - offsets.T   # (P, W)

    def cut(w, n):
        # n . (s(q_w) - x_w) <= rho_w, linear in c = z+ - z-
        row = np.kron(n, B[w])
        return np.concatenate([row, -row]), rho[w] + n @ offsets[w]

    rows, rhs = [], []
    for w in range(W):
        for n in np.vstack([np.eye(dim), -np.eye(dim)]):
            r, h = cut(w, n)
            rows.append(r)
            rhs.append(h)
    c = None
    for _ in range(max_rounds):
        res = linprog(obj, A_ub=np.array(rows), b_ub=np.array(rhs),
                      bounds=(0.0, None), method="highs")
        if res.status == 2:
            return None
        if res.status != 0:
            break
        c = res.x[:nc] - res.x[nc:]
        r = residual(c)
        norms = np.linalg.norm(r, axis=0)
        bad = np.flatnonzero(norms - rho > 0.1 * FIT_MARGIN)
        if bad.size == 0:
            break
        for w in bad:
            row, h = cut(w, r[:, w] / norms[w])
            rows.append(row)
            rhs.append(h)
    return None if c is None else c.reshape(dim, 2 * K)


def fourier_fit(schedule, scenario, K=DEFAULT_HARMONICS, frequencies=None,
                delta=DEFAULT_DELTA, max_rounds=500):
    """Fourier curves that pass within (1 - delta) r of every scheduled target.

    Agent j reaches its m-th waypoint at the arc-length fraction
    ``q = d_j^m / D_j``. Coefficients minimize ``sum f_k (|a_k| + |b_k|)``;
    ``s0`` is the first scheduled target and ``T = 1``. The result is
    re-checked with :func:`fourier_position` and :class:`InfeasibleFitError`
    is raised when a waypoint misses its disc by more than 1e-8.
    """
    if not 0 < delta < 1:
        raise InvalidArgument("delta must lie in (0, 1)")
    if schedule.n_agents != scenario.n_agents:
        raise InvalidArgument("schedule and scenario disagree on the number of agents")
    freqs = np.arange(1, K + 1, dtype=float) if frequencies is None \
        else np.asarray(frequencies, dtype=float)
    K = freqs.size
    if K < 1:
        raise InvalidArgument("at least one harmonic is required")
    P = scenario.dimension
    X = scenario.positions()
    R = scenario.radius_matrix()
    N = scenario.n_agents
    s0 = np.zeros((N, P))
    a = np.zeros((N, P, K))
    b = np.zeros((N, P, K))
    for j, tour in enumerate(schedule.tours):
        tour = np.asarray(tour, dtype=int)
        s0[j] = X[tour[0]]
        D = schedule.lengths[j]
        if tour.size < 2 or D <= 0:
            continue
        q = schedule.cumulative[j][1:] / D
        offsets = X[tour[1:]] - s0[j]
        rho = (1.0 - delta) * R[tour[1:], j] - FIT_MARGIN
        c = _fit_agent(q, offsets, rho, freqs, P, max_rounds)
        if c is None:
            raise InfeasibleFitError(j, K, math.inf)
        a[j], b[j] = c[:, :K], c[:, K:]
    params = ParamsFourier(T=1.0, frequencies=freqs, s0=s0, a=a, b=b)
    report = waypoint_report(params, schedule, scenario, delta)
    for j, viol in enumerate(report):
        if viol > FIT_TOL:
            raise InfeasibleFitError(j, K, viol)
    return params


def waypoint_report(params, schedule, scenario, delta=DEFAULT_DELTA):
    """Worst waypoint violation per agent, evaluated directly on the curve.

    Negative values are slack: every waypoint lies inside its disc.
    """
    X = scenario.positions()
    R = scenario.radius_matrix()
    out = np.zeros(schedule.n_agents)
    for j, tour in enumerate(schedule.tours):
        tour = np.asarray(tour, dtype=int)
        D = schedule.lengths[j]
        q = schedule.cumulative[j] / D if D > 0 else np.zeros(tour.size)
        s = fourier_position(params, j, q)
        gap = np.linalg.norm(s - X[tour], axis=1) - (1.0 - delta) * R[tour, j]
        out[j] = float(gap.max())
    return out


def fit_objective(params):
    """Frequency-weighted absolute coefficient sum."""
    return float(np.sum(params.frequencies * (np.abs(params.a) + np.abs(params.b))))
