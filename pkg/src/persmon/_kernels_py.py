"""NumPy implementation of the hot integration kernels.

Mirrors ``_kernels.pyx`` exactly in algorithm; used when the compiled
extension is unavailable and as the parity reference in tests.

All integrators are classical fixed-step RK4 over ``S`` steps of size ``h``.
Signal power is sampled on the "fine" grid of ``2S + 1`` points: node ``k``
is at index ``2k``, the midpoint of step ``k`` at ``2k + 1``.
"""
import numpy as np

OK = 0
BLOWUP = 1


def riccati_rk4(A, Q, G, eta, h, scale, omega0, guard):
    """Integrate dW = scale (A W + W A' + Q - eta W G W).

    Returns ``(nodes, stages, status, k_fail)``. ``stages[k]`` holds the three
    intermediate RK4 states of step ``k``; they let the sensitivity kernels
    reproduce the exact linearization of this discrete map.
    """
    S = (eta.shape[0] - 1) // 2
    L = A.shape[0]
    nodes = np.empty((S + 1, L, L))
    stages = np.empty((S, 3, L, L))
    At = A.T
    W = np.array(omega0, dtype=float)
    nodes[0] = W

    def f(Y, e):
        return scale * (A @ Y + Y @ At + Q - e * (Y @ G @ Y))

    for k in range(S):
        e0, em, e1 = eta[2 * k], eta[2 * k + 1], eta[2 * k + 2]
        k1 = f(W, e0)
        Y2 = W + 0.5 * h * k1
        k2 = f(Y2, em)
        Y3 = W + 0.5 * h * k2
        k3 = f(Y3, em)
        Y4 = W + h * k3
        k4 = f(Y4, e1)
        W = W + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        W = 0.5 * (W + W.T)
        stages[k, 0] = Y2
        stages[k, 1] = Y3
        stages[k, 2] = Y4
        nodes[k + 1] = W
        nrm = np.sqrt(np.sum(W * W))
        if not np.isfinite(nrm) or nrm > guard:
            return nodes, stages, BLOWUP, k + 1
    return nodes, stages, OK, S


def _stage_states(nodes, stages, eta, k):
    return (
        (nodes[k], eta[2 * k]),
        (stages[k, 0], eta[2 * k + 1]),
        (stages[k, 1], eta[2 * k + 1]),
        (stages[k, 2], eta[2 * k + 2]),
    )


def homogeneous_rk4(A, G, eta, nodes, stages, h, scale):
    """Transition matrix of dX = scale (A - eta W G) X with X(0) = I."""
    S = stages.shape[0]
    L = A.shape[0]
    out = np.empty((S + 1, L, L))
    X = np.eye(L)
    out[0] = X
    for k in range(S):
        F = [scale * (A - e * (Y @ G)) for Y, e in _stage_states(nodes, stages, eta, k)]
        m1 = F[0] @ X
        m2 = F[1] @ (X + 0.5 * h * m1)
        m3 = F[2] @ (X + 0.5 * h * m2)
        m4 = F[3] @ (X + h * m3)
        X = X + (h / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
        out[k + 1] = X
    return out


def forced_rk4(A, Q, G, eta, deta, dT, nodes, stages, h, scale):
    """Batched forced sensitivity equations with zero initial condition.

    For every parameter d solves

        dZ = scale (F Z + Z F') - scale deta_d W G W + dT_d (A W + W A' + Q - eta W G W)

    with F = A - eta W G, evaluating W at the RK4 stage states of the
    covariance integration. Returns Z with shape (D, S + 1, L, L).
    """
    S = stages.shape[0]
    L = A.shape[0]
    D = deta.shape[0]
    out = np.zeros((D, S + 1, L, L))
    if D == 0:
        return out
    At = A.T
    Z = np.zeros((D, L, L))
    dTb = np.asarray(dT, dtype=float)[:, None, None]
    idx = (0, 1, 1, 2)
    for k in range(S):
        terms = []
        for s, (Y, e) in enumerate(_stage_states(nodes, stages, eta, k)):
            YG = Y @ G
            P = YG @ Y
            F = scale * (A - e * YG)
            R = A @ Y + Y @ At + Q - e * P
            de = deta[:, 2 * k + idx[s]][:, None, None]
            b = -scale * de * P + dTb * R
            terms.append((F, b))

        def g(Zs, F, b):
            return F @ Zs + Zs @ F.T + b

        d1 = g(Z, *terms[0])
        d2 = g(Z + 0.5 * h * d1, *terms[1])
        d3 = g(Z + 0.5 * h * d2, *terms[2])
        d4 = g(Z + h * d3, *terms[3])
        Z = Z + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        Z = 0.5 * (Z + np.swapaxes(Z, 1, 2))
        out[:, k + 1] = Z
    return out


def tour_lengths(perms, bounds, dist):
    """Closed-tour lengths for permutation-with-breaks chromosomes.

    perms: (n, M) int; bounds: (n, N + 1) int group boundaries into each
    permutation. Empty groups have length 0.
    """
    n, M = perms.shape
    N = bounds.shape[1] - 1
    out = np.zeros((n, N))
    for i in range(n):
        p = perms[i]
        for j in range(N):
            a, b = bounds[i, j], bounds[i, j + 1]
            if b - a < 2:
                continue
            seg = p[a:b]
            out[i, j] = dist[seg[:-1], seg[1:]].sum() + dist[seg[-1], seg[0]]
    return out
