import numpy as np
import pytest

from persmon import _kernels_py, kernels
from persmon import covariance as cv
from persmon.fourier import ParamsFourier
from persmon.optimizer import evaluate

from conftest import coupled_scenario

compiled = pytest.mark.skipif("cython" not in kernels.available_backends(),
                              reason="compiled extension not built")


def _inputs(L=2, S=40, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(L, L)) - 1.5 * np.eye(L)
    B = rng.normal(size=(L, L))
    Q = B @ B.T + np.eye(L)
    G = np.eye(L)
    eta = np.abs(np.sin(np.linspace(0, 3, 2 * S + 1)))
    deta = rng.normal(size=(3, 2 * S + 1))
    return A, Q, G, eta, deta, 1.0 / S


def test_backend_selection_and_switching():
    assert "python" in kernels.available_backends()
    prev = kernels.use_backend("python")
    assert kernels.backend() == "python"
    kernels.use_backend(prev)
    assert kernels.backend() == prev
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


@compiled
def test_riccati_parity():
    from persmon import _kernels

    A, Q, G, eta, _, h = _inputs()
    W0 = np.eye(2)
    a = _kernels_py.riccati_rk4(A, Q, G, eta, h, 1.7, W0, 1e12)
    b = _kernels.riccati_rk4(A, Q, G, eta, h, 1.7, W0, 1e12)
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-13)
    np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-13)
    assert a[2] == b[2] == kernels.OK


@compiled
def test_sensitivity_parity():
    from persmon import _kernels

    A, Q, G, eta, deta, h = _inputs(L=3, seed=1)
    nodes, stages, _, _ = _kernels_py.riccati_rk4(A, Q, G, eta, h, 1.0, np.eye(3), 1e12)
    X1 = _kernels_py.homogeneous_rk4(A, G, eta, nodes, stages, h, 1.0)
    X2 = _kernels.homogeneous_rk4(A, G, eta, nodes, stages, h, 1.0)
    np.testing.assert_allclose(X1, X2, atol=1e-13)
    dT = np.array([1.0, 0.0, 0.0])
    F1 = _kernels_py.forced_rk4(A, Q, G, eta, deta, dT, nodes, stages, h, 1.0)
    F2 = _kernels.forced_rk4(A, Q, G, eta, deta, dT, nodes, stages, h, 1.0)
    np.testing.assert_allclose(F1, F2, atol=1e-12)


@compiled
def test_blowup_reported_identically():
    from persmon import _kernels

    A = np.array([[3.0]])
    Q = G = np.eye(1)
    eta = np.zeros(201)
    a = _kernels_py.riccati_rk4(A, Q, G, eta, 0.1, 1.0, np.eye(1), 1e6)
    b = _kernels.riccati_rk4(A, Q, G, eta, 0.1, 1.0, np.eye(1), 1e6)
    assert a[2] == b[2] == kernels.BLOWUP and a[3] == b[3]


@compiled
def test_tour_lengths_parity():
    from persmon import _kernels

    rng = np.random.default_rng(3)
    pos = rng.uniform(size=(9, 2))
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    perms = np.array([rng.permutation(9) for _ in range(20)], dtype=np.int64)
    bounds = np.tile(np.array([0, 1, 4, 9], dtype=np.int64), (20, 1))
    np.testing.assert_array_equal(_kernels_py.tour_lengths(perms, bounds, dist),
                                  _kernels.tour_lengths(perms, bounds, dist))


@compiled
def test_end_to_end_parity():
    sc = coupled_scenario([[0.0, 0.3], [0.4, 0.0]], 0.5, 1, beta=1e-2)
    p = ParamsFourier(T=1.2, frequencies=[1, 2], s0=[[0.2, 0.1]], a=[[[0.2, 0.01], [0.1, 0.0]]],
                      b=[[[0.05, 0.0], [0.1, 0.02]]])
    kernels.use_backend("cython")
    e1 = evaluate(sc, p, steps=100)
    kernels.use_backend("python")
    e2 = evaluate(sc, p, steps=100)
    assert e1.cost == pytest.approx(e2.cost, rel=1e-13)
    np.testing.assert_allclose(e1.gradient, e2.gradient, rtol=1e-10, atol=1e-12)


def test_python_backend_matches_analytic_root():
    kernels.use_backend("python")
    from conftest import scalar_scenario

    t = scalar_scenario(a=-1.0).targets[0]
    traj = cv.solve_periodic_riccati(t, np.ones(201), 1.0, steps=100)
    np.testing.assert_allclose(traj.omega[:, 0, 0], np.sqrt(2) - 1, atol=1e-9)
