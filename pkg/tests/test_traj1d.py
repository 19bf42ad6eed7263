import numpy as np
import pytest
from hypothesis import given, strategies as st

from persmon import covariance as cv
from persmon.errors import InvalidArgument, PreconditionError
from persmon.traj1d import (
    DwellMoveModel,
    Params1D,
    Policy1D,
    canonicalize_policy_1d,
    policy_cost,
    policy_from_params,
    position_1d,
    position_gradients_1d,
    project_params_1d,
    switch_bound,
    velocity_1d,
)

from conftest import scalar_scenario
from oracles import dwell_move_position, project_qp


def example():
    return Params1D(T=4.0, s0=[0.0], tau=[[0.25, 0.25]], omega=[[0.25, 0.25]])


def random_feasible(rng, n_agents=1, P=4):
    raw = Params1D(T=rng.uniform(1, 8), s0=rng.uniform(-2, 2, n_agents),
                   tau=rng.uniform(0, 0.3, (n_agents, P)), omega=rng.uniform(0, 0.2, (n_agents, P)))
    return project_params_1d(raw)


def boundaries(params, j):
    ends = np.cumsum(params.tau[j] + params.omega[j])
    starts = np.concatenate([[0.0], ends[:-1]]) + params.omega[j]
    return np.concatenate([starts, starts + params.tau[j]])


class TestPosition:
    @pytest.mark.parametrize("q, s", [(0.375, 0.5), (0.5, 1.0), (0.75, 1.0), (1.0, 0.0), (0.0, 0.0)])
    def test_example(self, q, s):
        assert position_1d(example(), 0, q) == pytest.approx(s, abs=1e-14)

    def test_no_moves_stays_put(self):
        p = Params1D(T=3.0, s0=[1.5], tau=[[0.0, 0.0]], omega=[[0.3, 0.1]])
        np.testing.assert_array_equal(position_1d(p, 0, np.linspace(0, 1, 11)), 1.5)

    def test_closure_at_end_of_last_segment(self):
        p = Params1D(T=2.0, s0=[0.3], tau=[[0.2, 0.2]], omega=[[0.1, 0.3]])
        assert position_1d(p, 0, 0.8) == pytest.approx(0.3, abs=1e-15)

    def test_infeasible_rejected(self):
        p = Params1D(T=2.0, s0=[0.0], tau=[[0.3, 0.1]], omega=[[0.0, 0.0]])
        with pytest.raises(InvalidArgument):
            position_1d(p, 0, 0.5)

    def test_speed_bound_scales_slope(self):
        assert velocity_1d(example(), 0, 0.375, u_max=2.0) == pytest.approx(8.0)

    @given(st.integers(0, 10_000))
    def test_segment_walk_oracle_and_periodicity(self, seed):
        rng = np.random.default_rng(seed)
        p = random_feasible(rng)
        u = rng.uniform(0.5, 2)
        q = rng.uniform(0, 1, 50)
        expected = [dwell_move_position(p.T, p.s0[0], p.tau[0], p.omega[0], x, u) for x in q]
        np.testing.assert_allclose(position_1d(p, 0, q, u), expected, atol=1e-12)
        assert position_1d(p, 0, 1.0, u) == pytest.approx(position_1d(p, 0, 0.0, u), abs=1e-9)
        v = velocity_1d(p, 0, q, u)
        assert np.all(np.isin(np.round(np.abs(v) / (p.T * u), 12), [0.0, 1.0]))


class TestGradients:
    def test_first_dwell(self):
        g = position_gradients_1d(example(), 0, 0.1)
        assert np.all(g["tau"] == 0) and np.all(g["omega"] == 0)
        assert g["T"][0] == 0 and g["s0"][0] == 1

    def test_period_partial_in_second_dwell(self):
        assert position_gradients_1d(example(), 0, 0.75)["T"][0] == pytest.approx(0.25)

    @given(st.integers(0, 10_000))
    def test_period_partial_is_scaled_displacement(self, seed):
        rng = np.random.default_rng(seed)
        p = random_feasible(rng)
        q = rng.uniform(0, 1, 20)
        g = position_gradients_1d(p, 0, q)
        np.testing.assert_allclose(g["T"], (position_1d(p, 0, q) - p.s0[0]) / p.T, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = random_feasible(rng, n_agents=2)
        h = 1e-7
        model = DwellMoveModel(scalar_scenario(n_agents=2))
        edges = np.concatenate([boundaries(p, j) for j in range(2)])
        q = rng.uniform(0, 1, 400)
        q = q[np.min(np.abs(q[:, None] - edges[None]), axis=1) > 1e-4][:100]
        assert q.size == 100
        _, jac = model.jacobian(p, q)
        vec = p.to_vector()
        for d in range(p.size):
            # perturbed parameters break closure, so go through the model (no feasibility check)
            vp, vm = vec.copy(), vec.copy()
            vp[d] += h
            vm[d] -= h
            fd = (model.positions(p.from_vector(vp), q) - model.positions(p.from_vector(vm), q)) / (2 * h)
            np.testing.assert_allclose(jac[..., d], fd, atol=1e-6)


class TestProjection:
    def test_feasible_unchanged(self):
        p = example()
        assert project_params_1d(p) is p

    @pytest.mark.parametrize("tau, omega", [
        ([-0.1, 0.1], [0.0, 0.0]),
        ([0.3, 0.3], [0.3, 0.3]),
        ([0.5, -0.2, 0.1, 0.4], [0.2, -0.1, 0.3, 0.0]),
    ])
    def test_matches_qp(self, tau, omega):
        p = Params1D(T=1.0, s0=[0.0], tau=[tau], omega=[omega])
        out = project_params_1d(p)
        t_ref, w_ref = project_qp(np.array(tau), np.array(omega))
        np.testing.assert_allclose(out.tau[0], t_ref, atol=1e-9)
        np.testing.assert_allclose(out.omega[0], w_ref, atol=1e-9)
        assert out.violation() <= 1e-9

    def test_uniform_shrink_onto_half_space(self):
        p = Params1D(T=1.0, s0=[0.0], tau=[[0.3, 0.3]], omega=[[0.3, 0.3]])
        out = project_params_1d(p)
        np.testing.assert_allclose(out.tau[0], 0.25, atol=1e-9)
        np.testing.assert_allclose(out.omega[0], 0.25, atol=1e-9)

    def test_period_clamped(self):
        out = project_params_1d(example().replace(T=-1.0))
        assert out.T == pytest.approx(1e-3)

    def test_transient_only_clips_signs(self):
        p = Params1D(T=1.0, s0=[0.0], tau=[[0.9, -0.2]], omega=[[0.5, 0.4]])
        out = project_params_1d(p, periodic=False)
        np.testing.assert_array_equal(out.tau[0], [0.9, 0.0])
        np.testing.assert_array_equal(out.omega[0], [0.5, 0.4])

    @given(st.integers(0, 10_000))
    def test_idempotent_and_non_expansive(self, seed):
        rng = np.random.default_rng(seed)
        P = int(rng.integers(1, 6))

        def raw():
            return Params1D(T=1.0, s0=[0.0], tau=rng.normal(0.2, 0.4, (1, P)),
                            omega=rng.normal(0.1, 0.3, (1, P)))

        x, y = raw(), raw()
        px, py = project_params_1d(x), project_params_1d(y)
        assert px.violation() <= 1e-9
        again = project_params_1d(px)
        np.testing.assert_allclose(again.to_vector(), px.to_vector(), atol=1e-9)
        assert np.linalg.norm(px.to_vector() - py.to_vector()) <= np.linalg.norm(x.to_vector() - y.to_vector()) + 1e-8


def _bang_dwell_policy():
    # dwell on 0, go to 3, dwell, come back
    return Policy1D(s0=[0.0], breaks=[np.array([0.0, 1.0, 4.0, 5.0, 8.0])],
                    controls=[np.array([0.0, 1.0, 0.0, -1.0])], u_max=1.0)


def _eta_on_grid(scenario, policy, t):
    from persmon.scenario import sensing_terms

    g2, _ = sensing_terms(scenario, policy.positions(t)[:, :, None])
    return g2.sum(axis=2).T


class TestCanonicalize:
    def test_fixed_point(self):
        sc = scalar_scenario(positions=[0.0, 3.0], radius=0.5)
        pol = _bang_dwell_policy()
        out = canonicalize_policy_1d(pol, sc)
        t = np.linspace(0, 8, 2001)
        np.testing.assert_allclose(out.positions(t), pol.positions(t), atol=1e-12)
        assert policy_cost(sc, out, 500)[0] == pytest.approx(policy_cost(sc, pol, 500)[0], rel=1e-12)

    def test_sinusoid_cost_not_increased(self):
        sc = scalar_scenario(a=-0.2, positions=[1.0, 4.0], radius=0.5)
        b = np.linspace(0, 10, 401)
        s = 1.2 * np.sin(2 * np.pi * b / 10)
        pol = Policy1D(s0=[0.0], breaks=[b], controls=[np.diff(s) / np.diff(b)], u_max=1.0)
        out = canonicalize_policy_1d(pol, sc)
        assert set(np.unique(out.controls[0])) <= {-1.0, 0.0, 1.0}
        before, eta_in = policy_cost(sc, pol, 2000)
        after, eta_out = policy_cost(sc, out, 2000)
        assert after <= before + 1e-12
        ok, _ = cv.check_monotonicity(sc.targets[0], eta_out[0], eta_in[0], np.eye(1), span=10.0,
                                      steps=2000)
        assert ok

    def test_switch_bound_and_dominance_on_random_policies(self):
        rng = np.random.default_rng(11)
        sc = scalar_scenario(a=-0.1, positions=[0.0, 3.0, 6.0, 9.0], radius=0.5)
        horizon = 20.0
        bound = switch_bound(sc, horizon)
        assert bound == pytest.approx(24.0)
        t = np.linspace(0, horizon, 4001)
        for _ in range(50):
            n = int(rng.integers(3, 40))
            b = np.concatenate([[0.0], np.sort(rng.uniform(0, horizon, n - 1)), [horizon]])
            b = b[np.concatenate([[True], np.diff(b) > 1e-6])]
            pol = Policy1D(s0=rng.uniform(-1, 10, 1), breaks=[b],
                           controls=[rng.uniform(-1, 1, b.size - 1)], u_max=1.0)
            out = canonicalize_policy_1d(pol, sc)
            assert out.switch_count(0) <= bound
            assert np.all(np.abs(out.controls[0]) <= 1.0 + 1e-12)
            eta_in, eta_out = _eta_on_grid(sc, pol, t), _eta_on_grid(sc, out, t)
            assert np.all(eta_out >= eta_in - 1e-9)

    def test_non_isolated(self):
        sc = scalar_scenario(positions=[0.0, 0.8], radius=0.5)
        pol = _bang_dwell_policy()
        with pytest.raises(PreconditionError):
            canonicalize_policy_1d(pol, sc)
        out = canonicalize_policy_1d(pol, sc, require_isolated=False)
        assert out.horizon == pol.horizon

    def test_policy_unrolls_params(self):
        p = example()
        pol = policy_from_params(p, 1.0, 12.0)
        t = np.linspace(0, 12, 97)
        np.testing.assert_allclose(pol.position(0, t), position_1d(p, 0, (t / p.T) % 1.0), atol=1e-12)

    def test_control_bound_enforced(self):
        with pytest.raises(InvalidArgument):
            Policy1D(s0=[0.0], breaks=[np.array([0.0, 1.0])], controls=[np.array([2.0])], u_max=1.0)
