import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from persmon.errors import InvalidArgument
from persmon.fourier import (
    FourierModel,
    ParamsFourier,
    effort_and_gradients,
    fourier_position,
    fourier_position_gradients,
    fourier_velocity,
)

from conftest import coupled_scenario
from oracles import fourier_effort_quadrature


def single(a=0.0, b=0.0, T=1.0):
    return ParamsFourier(T=T, frequencies=[1], s0=[[0.0]], a=[[[a]]], b=[[[b]]])


def random_params(rng, N=2, P=2, K=3):
    freqs = np.sort(rng.choice(np.arange(1, 8), K, replace=False))
    return ParamsFourier(T=rng.uniform(0.5, 3), frequencies=freqs, s0=rng.normal(size=(N, P)),
                         a=rng.normal(size=(N, P, K)), b=rng.normal(size=(N, P, K)))


class TestPosition:
    @pytest.mark.parametrize("q, s", [(0.0, 0.0), (0.25, 1.0), (0.5, 0.0)])
    def test_sine(self, q, s):
        assert fourier_position(single(a=1.0), 0, q)[0] == pytest.approx(s, abs=1e-14)

    @pytest.mark.parametrize("q, s", [(0.0, 0.0), (0.5, -2.0)])
    def test_cosine(self, q, s):
        assert fourier_position(single(b=1.0), 0, q)[0] == pytest.approx(s, abs=1e-14)

    @given(st.integers(0, 10_000))
    def test_periodic_and_starts_at_s0(self, seed):
        p = random_params(np.random.default_rng(seed))
        for j in range(p.n_agents):
            np.testing.assert_allclose(fourier_position(p, j, 0.0), p.s0[j], atol=1e-14)
            np.testing.assert_allclose(fourier_position(p, j, 1.0), p.s0[j], atol=1e-12)

    def test_velocity_matches_finite_difference(self):
        p = random_params(np.random.default_rng(3))
        q, h = np.linspace(0.05, 0.95, 17), 1e-6
        fd = (fourier_position(p, 1, q + h) - fourier_position(p, 1, q - h)) / (2 * h)
        np.testing.assert_allclose(fourier_velocity(p, 1, q), fd, rtol=1e-7, atol=1e-7)

    @pytest.mark.parametrize("freqs", [[0, 1], [2, 1], [1.5], [1, 1]])
    def test_bad_frequencies(self, freqs):
        with pytest.raises(InvalidArgument):
            ParamsFourier(T=1.0, frequencies=freqs, s0=[[0.0]], a=np.zeros((1, 1, len(freqs))),
                          b=np.zeros((1, 1, len(freqs))))

    def test_vector_round_trip(self):
        p = random_params(np.random.default_rng(4))
        q = p.from_vector(p.to_vector())
        np.testing.assert_array_equal(q.to_vector(), p.to_vector())
        assert len(p.labels()) == p.size


class TestPositionGradients:
    def test_quarter_period(self):
        g = fourier_position_gradients(single(a=0.3, b=0.7), 0, 0, 0.25)
        assert g["a"][0, 0] == pytest.approx(1.0) and g["b"][0, 0] == pytest.approx(-1.0)
        assert g["T"][0] == 0.0 and g["s0"][0] == 1.0

    @pytest.mark.parametrize("seed", range(3))
    def test_jacobian_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params(rng)
        model = FourierModel(coupled_scenario([[0.0, 0.0]], 0.5, p.n_agents))
        q = rng.uniform(0, 1, 30)
        _, jac = model.jacobian(p, q)
        vec, h = p.to_vector(), 1e-6
        for d in range(p.size):
            vp, vm = vec.copy(), vec.copy()
            vp[d] += h
            vm[d] -= h
            fd = (model.positions(p.from_vector(vp), q) - model.positions(p.from_vector(vm), q)) / (2 * h)
            np.testing.assert_allclose(jac[..., d], fd, atol=1e-10)
        assert np.all(jac[..., 0] == 0)


class TestEffort:
    def test_single_harmonic(self):
        e, _ = effort_and_gradients(single(a=1.0))
        assert e == pytest.approx(2 * math.pi ** 2, rel=1e-14)

    def test_period_partial(self):
        _, g = effort_and_gradients(single(a=1.0, T=2.0))
        assert g[0] == pytest.approx(-math.pi ** 2 / 2, rel=1e-14)

    def test_rejects_nonpositive_period(self):
        with pytest.raises(InvalidArgument):
            effort_and_gradients(single(a=1.0, T=0.0))

    @given(st.integers(0, 10_000))
    def test_gradient_matches_finite_differences(self, seed):
        p = random_params(np.random.default_rng(seed))
        e, g = effort_and_gradients(p)
        vec = p.to_vector()
        for d in range(p.size):
            h = 1e-6 * max(1.0, abs(vec[d]))
            vp, vm = vec.copy(), vec.copy()
            vp[d] += h
            vm[d] -= h
            fd = (effort_and_gradients(p.from_vector(vp))[0] - effort_and_gradients(p.from_vector(vm))[0]) / (2 * h)
            assert g[d] == pytest.approx(fd, rel=1e-8, abs=1e-8 * max(1.0, e))

    def test_matches_quadrature(self):
        p = random_params(np.random.default_rng(5), N=1, P=2)
        e, _ = effort_and_gradients(p)
        ref = fourier_effort_quadrature(p.T, p.frequencies, p.a[0], p.b[0])
        assert e == pytest.approx(ref, rel=1e-9)

    @given(st.integers(0, 10_000), st.floats(0.0, 2 * math.pi))
    def test_phase_invariance(self, seed, phi):
        p = random_params(np.random.default_rng(seed))
        c, s = math.cos(phi), math.sin(phi)
        rotated = p.replace(a=c * p.a - s * p.b, b=s * p.a + c * p.b)
        assert effort_and_gradients(rotated)[0] == pytest.approx(effort_and_gradients(p)[0], rel=1e-12)

    def test_transient_effort_gradient(self):
        p = random_params(np.random.default_rng(6), N=1, K=2)
        model = FourierModel(coupled_scenario([[0.0, 0.0]], 0.5, 1))
        horizon = 1.7
        t = np.linspace(0, horizon, 4001)
        _, g = model.transient_effort(p, horizon, t)
        vec, h = p.to_vector(), 1e-6
        for d in range(p.size):
            vp, vm = vec.copy(), vec.copy()
            vp[d] += h
            vm[d] -= h
            fd = (model.transient_effort(p.from_vector(vp), horizon, t)[0]
                  - model.transient_effort(p.from_vector(vm), horizon, t)[0]) / (2 * h)
            assert g[d] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_projection_clamps_period(self):
        model = FourierModel(coupled_scenario([[0.0, 0.0]], 0.5, 1))
        assert model.project(single(T=-3.0)).T == pytest.approx(1e-3)
        p = single(T=2.0)
        assert model.project(p) is p
