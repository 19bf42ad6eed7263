import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from persmon.errors import InfeasibleFitError, InvalidArgument
from persmon.fourier import FourierModel, fourier_position
from persmon.initializer import (
    GAConfig,
    Schedule,
    fit_objective,
    fourier_fit,
    mtsp_solve,
    schedule_to_params_1d,
    waypoint_report,
)
from persmon.scenario import build_eta_profile
from persmon.traj1d import DwellMoveModel, position_1d, project_params_1d

from conftest import coupled_scenario, scalar_scenario
from oracles import brute_force_tour

TRIANGLE = [[0.0, 0.5], [0.5, 0.0], [-0.5, 0.0]]


class TestGA:
    def test_triangle_perimeter(self):
        sched = mtsp_solve(np.array(TRIANGLE), 1, GAConfig(generations=20))
        assert sched.max_length == pytest.approx(2 * math.sqrt(0.5) + 1, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_single_agent_matches_brute_force(self, seed):
        pos = np.random.default_rng(seed).uniform(-5, 5, (7, 2))
        sched = mtsp_solve(pos, 1, GAConfig(generations=300, seed=seed))
        assert sched.max_length == pytest.approx(brute_force_tour(pos), rel=1e-12)

    @given(st.integers(0, 10_000), st.integers(2, 8))
    def test_collinear_is_twice_the_span(self, seed, M):
        x = np.random.default_rng(seed).uniform(0, 10, M)
        sched = mtsp_solve(x[:, None], 1, GAConfig(generations=200, seed=seed))
        assert sched.max_length == pytest.approx(2 * (x.max() - x.min()), rel=1e-12)
        visit = x[sched.tours[0]]
        k = int(np.argmin(visit))
        steps = np.diff(np.concatenate([np.roll(visit, -k), [visit.min()]]))
        # one climb to the right end and one return: the sign flips exactly once
        assert np.count_nonzero(np.diff(np.sign(steps[steps != 0])) != 0) <= 1

    def test_more_agents_than_targets(self):
        sched = mtsp_solve(np.array(TRIANGLE), 5)
        assert sched.max_length == 0.0
        assert all(t.size <= 1 for t in sched.tours)
        assert sched.covered().tolist() == [0, 1, 2]

    @pytest.mark.parametrize("N", [2, 3])
    def test_history_monotone_and_coverage(self, N):
        pos = np.random.default_rng(0).uniform(-5, 5, (12, 2))
        sched = mtsp_solve(pos, N, GAConfig(generations=150))
        assert sched.history.size == 151
        assert np.all(np.diff(sched.history) <= 0)
        assert sched.history[-1] == pytest.approx(sched.max_length)
        assert sched.covered().tolist() == list(range(12))
        assert sum(t.size for t in sched.tours) == 12

    def test_deterministic_for_seed(self):
        pos = np.random.default_rng(1).uniform(-5, 5, (10, 2))
        a = mtsp_solve(pos, 2, GAConfig(generations=100, seed=4))
        b = mtsp_solve(pos, 2, GAConfig(generations=100, seed=4))
        assert [t.tolist() for t in a.tours] == [t.tolist() for t in b.tours]
        np.testing.assert_array_equal(a.history, b.history)

    def test_cumulative_distances(self):
        sched = Schedule.from_tours([[0, 1, 2]], np.array([[0.0], [1.0], [3.0]]))
        np.testing.assert_allclose(sched.cumulative[0], [0.0, 1.0, 3.0])
        assert sched.lengths[0] == pytest.approx(6.0)

    @pytest.mark.parametrize("kw", [dict(population=1), dict(generations=-1), dict(elite_fraction=1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(InvalidArgument):
            GAConfig(**kw)


class TestLineConversion:
    def test_out_and_back(self):
        sc = scalar_scenario(positions=[0.0, 2.0], radius=0.5)
        p = schedule_to_params_1d(Schedule.from_tours([[0, 1]], [0.0, 2.0]), sc)
        assert p.T == pytest.approx(4.0)
        np.testing.assert_allclose(p.tau[0], [0.5, 0.5])
        np.testing.assert_allclose(p.omega[0], [0.0, 0.0])

    def test_five_targets_two_agents(self):
        x = np.array([1.5, 3.0, 4.5, 6.5, 8.0])
        sc = scalar_scenario(a=-1.0, positions=x, radius=0.9, n_agents=2, u_max=1.0)
        sched = mtsp_solve(x[:, None], 2, GAConfig(generations=200))
        p = schedule_to_params_1d(sched, sc)
        assert project_params_1d(p) is p
        assert p.T == pytest.approx(sched.max_length)
        q = np.linspace(0, 1, 4001)
        for j, tour in enumerate(sched.tours):
            s = position_1d(p, j, q)
            for i in tour:
                assert np.min(np.abs(s - x[i])) <= 1e-9
        prof = build_eta_profile(sc, lambda g: DwellMoveModel(sc).jacobian(p, g), q)
        assert np.all(np.count_nonzero(prof.eta > 0, axis=1) > 10)

    def test_shorter_tour_dwells_first(self):
        x = np.array([0.0, 1.0, 5.0, 9.0])
        sc = scalar_scenario(positions=x, radius=0.3, n_agents=2, u_max=[1.0, 2.0])
        sched = Schedule.from_tours([[0, 1], [2, 3]], x)
        p = schedule_to_params_1d(sched, sc)
        # agent 1 needs 8 / 2 = 4 time units, agent 0 only 2 and dwells for the rest
        assert p.T == pytest.approx(4.0)
        np.testing.assert_allclose(p.tau[0], [0.25, 0.25])
        np.testing.assert_allclose(p.omega[0], [0.5, 0.0])
        np.testing.assert_allclose(p.tau[1], [0.5, 0.5])
        sc2 = scalar_scenario(positions=x, radius=0.3, n_agents=2, u_max=1.0)
        p2 = schedule_to_params_1d(sched, sc2)
        assert p2.T == pytest.approx(8.0)
        np.testing.assert_allclose(p2.tau[0], [0.125, 0.125])
        np.testing.assert_allclose(p2.omega[0], [0.75, 0.0])

    def test_requires_line(self):
        sc = coupled_scenario(TRIANGLE, 0.5, 1)
        with pytest.raises(InvalidArgument):
            schedule_to_params_1d(Schedule.from_tours([[0, 1, 2]], TRIANGLE), sc)

    def test_too_few_moves(self):
        x = np.array([0.0, 2.0])
        with pytest.raises(InvalidArgument):
            schedule_to_params_1d(Schedule.from_tours([[0, 1]], x), scalar_scenario(positions=x), n_moves=1)


class TestFourierFit:
    def test_single_target(self):
        sc = coupled_scenario([[1.0, -2.0]], 0.5, 1)
        p = fourier_fit(mtsp_solve(np.array([[1.0, -2.0]]), 1), sc)
        assert np.all(p.a == 0) and np.all(p.b == 0)
        np.testing.assert_array_equal(p.s0[0], [1.0, -2.0])
        assert fit_objective(p) == 0.0

    def test_triangle_feasible(self):
        sc = coupled_scenario(TRIANGLE, 0.5, 1)
        sched = mtsp_solve(np.array(TRIANGLE), 1, GAConfig(generations=20))
        p = fourier_fit(sched, sc, K=5, delta=0.1)
        assert p.T == 1.0
        np.testing.assert_array_equal(p.s0[0], TRIANGLE[sched.tours[0][0]])
        # independent re-evaluation of every waypoint
        tour = sched.tours[0]
        q = sched.cumulative[0] / sched.lengths[0]
        s = fourier_position(p, 0, q)
        dist = np.linalg.norm(s - np.array(TRIANGLE)[tour], axis=1)
        assert np.all(dist <= 0.9 * 0.5 + 1e-8)
        assert waypoint_report(p, sched, sc).max() <= 1e-8

    def test_objective_monotone_in_delta(self):
        sc = coupled_scenario(TRIANGLE, 0.5, 1)
        sched = mtsp_solve(np.array(TRIANGLE), 1, GAConfig(generations=20))
        objs = [fit_objective(fourier_fit(sched, sc, delta=d)) for d in (0.05, 0.1, 0.2)]
        assert objs[0] <= objs[1] + 1e-7 <= objs[2] + 2e-7
        assert objs[0] < objs[2]

    def test_fifteen_targets_three_agents(self):
        pos = np.random.default_rng(0).uniform(-5, 5, (15, 2))
        sc = coupled_scenario(pos, 0.5, 3)
        sched = mtsp_solve(pos, 3, GAConfig(generations=300))
        p = fourier_fit(sched, sc)
        assert np.all(waypoint_report(p, sched, sc) <= 1e-8)
        prof = build_eta_profile(sc, lambda g: FourierModel(sc).jacobian(p, g), np.linspace(0, 1, 4001))
        assert np.all(prof.eta.max(axis=1) > 0)

    def test_too_few_harmonics(self):
        pos = np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 3.0], [0.0, 3.0], [1.5, 1.5], [1.5, -2.0]])
        sc = coupled_scenario(pos, 0.05, 1)
        sched = Schedule.from_tours([[0, 4, 1, 5, 2, 3]], pos)
        with pytest.raises(InfeasibleFitError) as exc:
            fourier_fit(sched, sc, K=1)
        assert "harmonic" in str(exc.value) or "K" in str(exc.value)

    @pytest.mark.parametrize("delta", [0.0, 1.0])
    def test_bad_delta(self, delta):
        sc = coupled_scenario(TRIANGLE, 0.5, 1)
        with pytest.raises(InvalidArgument):
            fourier_fit(Schedule.from_tours([[0, 1, 2]], TRIANGLE), sc, delta=delta)
