"""Backend selection for the integration kernels.

The compiled extension is used when it imports; otherwise the NumPy
implementation takes over. ``use_backend`` switches explicitly, which the
benchmark and the parity tests rely on.
"""
from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

_active = _compiled if _compiled is not None else _kernels_py

OK = 0
BLOWUP = 1


def available_backends():
    return sorted(_BACKENDS)


def backend():
    return "cython" if _active is _compiled and _compiled is not None else "python"


def use_backend(name):
    """Select ``"cython"`` or ``"python"``; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; choose from {available_backends()}")
    prev = backend()
    _active = _BACKENDS[name]
    return prev


def riccati_rk4(A, Q, G, eta, h, scale, omega0, guard):
    return _active.riccati_rk4(A, Q, G, eta, h, scale, omega0, guard)


def homogeneous_rk4(A, G, eta, nodes, stages, h, scale):
    return _active.homogeneous_rk4(A, G, eta, nodes, stages, h, scale)


def forced_rk4(A, Q, G, eta, deta, dT, nodes, stages, h, scale):
    return _active.forced_rk4(A, Q, G, eta, deta, dT, nodes, stages, h, scale)


def tour_lengths(perms, bounds, dist):
    return _active.tour_lengths(perms, bounds, dist)
