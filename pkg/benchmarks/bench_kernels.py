"""Compare the compiled and NumPy kernel backends.

Times the periodic Riccati solve, the steady-state gradient, a full cost and
gradient evaluation and GA tour scoring under each available backend, and
checks that both backends return the same numbers.

    python benchmarks/bench_kernels.py [--repeat 5] [--steps 2000]
"""
import argparse
import time

import numpy as np

from persmon import covariance as cv
from persmon import kernels
from persmon.initializer import GAConfig, fourier_fit, mtsp_solve
from persmon.optimizer import evaluate
from persmon.scenario import uniform_scenario

A = np.array([[-1.0, -0.1], [-0.1, 0.01]])
I2 = np.eye(2)


def _setup(steps):
    pts = np.array([[0.0, 0.5], [0.5, 0.0], [-0.5, 0.0]])
    sc = uniform_scenario(pts, A, I2, I2, I2, 0.5, 1, beta=1e-3)
    sched = mtsp_solve(pts, 1, GAConfig(generations=50))
    params = fourier_fit(sched, sc)
    ev = evaluate(sc, params, steps=steps)
    target = sc.targets[0]
    eta = ev.profile.eta[0]
    deta = ev.profile.deta[0]
    traj = ev.trajectories[0]
    rng = np.random.default_rng(0)
    perms = np.array([rng.permutation(15) for _ in range(100)], dtype=np.int64)
    bounds = np.tile(np.array([0, 5, 10, 15], dtype=np.int64), (100, 1))
    pos = rng.uniform(-5, 5, (15, 2))
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    cases = {
        "periodic_riccati": lambda: cv.solve_periodic_riccati(target, eta, params.T, steps=steps),
        "steady_gradient": lambda: cv.steady_trace_gradient(
            target, traj, deta, (np.arange(deta.shape[0]) == 0).astype(float)),
        "evaluate": lambda: evaluate(sc, params, steps=steps).cost,
        "tour_lengths": lambda: kernels.tour_lengths(perms, bounds, dist),
    }
    return cases


def _time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _value(result):
    if isinstance(result, cv.CovarianceTrajectory):
        return result.omega
    return np.asarray(result, dtype=float)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    cases = _setup(args.steps)
    times, values = {}, {}
    prev = kernels.backend()
    try:
        for name in backends:
            kernels.use_backend(name)
            for case, fn in cases.items():
                times[case, name] = _time(fn, args.repeat)
                values[case, name] = _value(fn())
    finally:
        kernels.use_backend(prev)
    print(f"{'case':<18}" + "".join(f"{b + ' [ms]':>16}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    for case in cases:
        row = f"{case:<18}" + "".join(f"{times[case, b] * 1e3:16.3f}" for b in backends)
        if len(backends) == 2:
            speed = times[case, "python"] / times[case, "cython"]
            diff = float(np.max(np.abs(values[case, "python"] - values[case, "cython"])))
            row += f"{speed:10.1f}{diff:12.2e}"
        print(row)


if __name__ == "__main__":
    main()
