"""Parameter documents, run configuration and CSV outputs.

Parameter documents are JSON::

    {"kind": "1d", "T": 6.0, "agents": [{"s0": 2.7, "tau": [...], "omega": [...]}]}
    {"kind": "fourier", "T": 1.0, "frequencies": [1, 2, 3],
     "agents": [{"s0": [x, y], "a": [[...], [...]], "b": [[...], [...]]}]}

Run configurations bundle a scenario (inline or by path), an optional
initial parameter document, initializer and optimizer settings. Targets
can be generated from a seed with a ``generate`` block in the scenario.
All files are written atomically (temporary file, then rename).
"""
from __future__ import annotations

import copy
import csv
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ScenarioError
from .fourier import ParamsFourier
from .scenario import scenario_from_dict
from .traj1d import Params1D

CSV_VERSION = 1
LOG_COLUMNS = ("iteration", "cost", "grad_norm", "step", "wall_ms")
TRAJECTORY_COLUMNS = ("q", "agent", "axis", "position", "velocity")


def _fmt(x):
    # shortest round-trip representation, stable across runs
    return repr(float(x))


# -- atomic writes ------------------------------------------------------------

def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=False) + "\n")


def read_json(path, what="file"):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(what, f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(what, f"invalid JSON in {path}: {exc}") from None


# -- parameter documents ------------------------------------------------------

def params_to_dict(params):
    if isinstance(params, Params1D):
        return {
            "kind": "1d",
            "T": params.T,
            "agents": [
                {"s0": float(params.s0[j]), "tau": params.tau[j].tolist(),
                 "omega": params.omega[j].tolist()}
                for j in range(params.n_agents)
            ],
        }
    if isinstance(params, ParamsFourier):
        return {
            "kind": "fourier",
            "T": params.T,
            "frequencies": [int(f) for f in params.frequencies],
            "agents": [
                {"s0": params.s0[j].tolist(), "a": params.a[j].tolist(), "b": params.b[j].tolist()}
                for j in range(params.n_agents)
            ],
        }
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def _number(doc, key, where):
    try:
        val = float(doc[key])
    except KeyError:
        raise ScenarioError(f"{where}.{key}", "missing") from None
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{key}", "must be a number") from None
    if not np.isfinite(val):
        raise ScenarioError(f"{where}.{key}", "must be finite")
    return val


def _array(doc, key, where):
    if key not in doc:
        raise ScenarioError(f"{where}.{key}", "missing")
    try:
        arr = np.array(doc[key], dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{key}", "must be numeric") from None
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{where}.{key}", "must be finite")
    return arr


def params_from_dict(doc):
    """Inverse of :func:`params_to_dict`; the kind is inferred when absent."""
    if not isinstance(doc, dict):
        raise ScenarioError("params", "parameter document must be an object")
    kind = doc.get("kind", "fourier" if "frequencies" in doc else "1d")
    agents = doc.get("agents")
    if not isinstance(agents, list) or not agents:
        raise ScenarioError("params.agents", "must be a non-empty list")
    T = _number(doc, "T", "params")
    if kind == "1d":
        s0, tau, omega = [], [], []
        for j, a in enumerate(agents):
            where = f"params.agents[{j}]"
            s0.append(_number(a, "s0", where))
            tau.append(_array(a, "tau", where).ravel())
            omega.append(_array(a, "omega", where).ravel())
        if len({t.size for t in tau + omega}) != 1:
            raise ScenarioError("params.agents", "all tau/omega lists must have equal length")
        return Params1D(T=T, s0=np.array(s0), tau=np.array(tau), omega=np.array(omega))
    if kind == "fourier":
        freqs = _array(doc, "frequencies", "params").ravel()
        s0, a_, b_ = [], [], []
        for j, a in enumerate(agents):
            where = f"params.agents[{j}]"
            s = _array(a, "s0", where).ravel()
            av = _array(a, "a", where).reshape(s.size, -1)
            bv = _array(a, "b", where).reshape(s.size, -1)
            if av.shape[1] != freqs.size or bv.shape[1] != freqs.size:
                raise ScenarioError(where, "a and b need one column per frequency")
            s0.append(s)
            a_.append(av)
            b_.append(bv)
        try:
            return ParamsFourier(T=T, frequencies=freqs, s0=np.array(s0), a=np.array(a_),
                                 b=np.array(b_))
        except ValueError as exc:
            raise ScenarioError("params", str(exc)) from None
    raise ScenarioError("params.kind", "must be '1d' or 'fourier'")


def load_params(path):
    return params_from_dict(read_json(path, "params"))


def save_params(path, params):
    write_json(path, params_to_dict(params))


# -- run configuration --------------------------------------------------------

def expand_scenario_doc(doc):
    """Replace a ``generate`` block with explicit targets drawn from its seed.

    ``generate`` holds ``count``, ``low``, ``high``, ``seed`` and a
    ``template`` with the shared A, Q, H, R and radius.
    """
    if not isinstance(doc, dict) or "generate" not in doc:
        return doc
    doc = copy.deepcopy(doc)
    gen = doc.pop("generate")
    try:
        count = int(gen["count"])
        low, high = float(gen.get("low", -5.0)), float(gen.get("high", 5.0))
        seed = int(gen.get("seed", 0))
        template = gen["template"]
        dim = int(doc["dimension"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError("scenario.generate", f"invalid block ({exc})") from None
    if count < 1 or not high > low:
        raise ScenarioError("scenario.generate", "need count >= 1 and high > low")
    pts = np.random.default_rng(seed).uniform(low, high, size=(count, dim))
    targets = list(doc.get("targets", []))
    for p in pts:
        entry = copy.deepcopy(template)
        entry["position"] = p.tolist()
        targets.append(entry)
    doc["targets"] = targets
    return doc


@dataclass
class RunConfig:
    """Everything a CLI run needs.

    ``params`` is None when the run starts with an initialization.
    """

    scenario: object
    kind: str
    params: object = None
    mode: str = "steady"
    step: float = 1e-4
    eps: float = 1e-4
    max_iters: int = 4000
    armijo: bool = False
    grid: int = 2000
    seed: int = 0
    generations: int = 3000
    harmonics: int = 5
    delta: float = 0.1
    n_moves: int | None = None
    paths: int = 1000
    horizon: float | None = None
    name: str = ""
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("1d", "fourier"):
            raise ScenarioError("kind", "must be '1d' or 'fourier'")
        if self.kind == "1d" and self.scenario.dimension != 1:
            raise ScenarioError("kind", "1d parameters need a one-dimensional scenario")
        if self.mode not in ("steady", "transient"):
            raise ScenarioError("mode", "must be 'steady' or 'transient'")
        if self.params is not None and self.params.kind != self.kind:
            raise ScenarioError("params.kind", f"does not match run kind {self.kind!r}")
        if self.grid < 2:
            raise ScenarioError("grid", "must be at least 2")


def builtin_configs():
    """Names of the shipped reproduction configurations."""
    root = resources.files("persmon") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve_config(ref):
    path = Path(ref)
    if path.exists():
        return read_json(path, "config"), path.parent
    if ref in builtin_configs():
        text = (resources.files("persmon") / "data" / f"{ref}.json").read_text()
        return json.loads(text), None
    raise ScenarioError("config", f"no such file or built-in config: {ref}")


def load_run_config(ref=None, scenario_path=None, params_path=None, overrides=None):
    """Assemble a :class:`RunConfig` from a config file or built-in name.

    ``scenario_path`` and ``params_path`` replace the config's scenario and
    parameters; ``overrides`` (already parsed CLI flags, None entries
    ignored) replace individual settings.
    """
    doc, base = ({}, None) if ref is None else _resolve_config(ref)
    if not isinstance(doc, dict):
        raise ScenarioError("config", "must be an object")
    scen_doc = doc.get("scenario")
    if scenario_path is not None:
        scen_doc = read_json(scenario_path, "scenario")
    elif isinstance(scen_doc, str):
        p = Path(scen_doc) if base is None else base / scen_doc
        scen_doc = read_json(p, "scenario")
    if scen_doc is None:
        raise ScenarioError("scenario", "missing (pass --scenario or a config)")
    scenario = scenario_from_dict(expand_scenario_doc(scen_doc))

    params_doc = doc.get("params")
    if params_path is not None:
        params_doc = read_json(params_path, "params")
    elif isinstance(params_doc, str):
        p = Path(params_doc) if base is None else base / params_doc
        params_doc = read_json(p, "params")
    params = None if params_doc is None else params_from_dict(params_doc)

    opt = doc.get("optimizer", {})
    init = doc.get("init", {})
    val = doc.get("validate", {})
    settings = {
        "mode": doc.get("mode", scenario.mode),
        "step": opt.get("step", 1e-4),
        "eps": opt.get("eps", 1e-4),
        "max_iters": opt.get("max_iters", 4000),
        "armijo": opt.get("armijo", False),
        "grid": doc.get("grid", 2000),
        "seed": doc.get("seed", 0),
        "generations": init.get("generations", 3000),
        "harmonics": init.get("harmonics", 5),
        "delta": init.get("delta", 0.1),
        "n_moves": init.get("n_moves"),
        "paths": val.get("paths", 1000),
        "horizon": val.get("horizon"),
    }
    for key, value in (overrides or {}).items():
        if value is not None and key in settings:
            settings[key] = value
    kind = doc.get("kind")
    if kind is None:
        kind = params.kind if params is not None else ("1d" if scenario.dimension == 1 else "fourier")
    if settings["mode"] == "transient" and scenario.horizon is None:
        raise ScenarioError("horizon", "transient mode needs a scenario horizon")
    if settings["mode"] != scenario.mode:
        scenario = scenario.replace(mode=settings["mode"])
    try:
        return RunConfig(scenario=scenario, kind=kind, params=params, name=doc.get("name", ""),
                         source=doc, **settings)
    except TypeError as exc:
        raise ScenarioError("config", str(exc)) from None


# -- CSV outputs --------------------------------------------------------------

def _csv_text(header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_log_csv(path, log, timing=True):
    """One row per iteration; ``timing=False`` writes zero wall times."""
    rows = [
        [e.iteration, _fmt(e.cost), _fmt(e.grad_norm), _fmt(e.step),
         _fmt(e.wall_ms if timing else 0.0)]
        for e in log.entries
    ]
    atomic_write_text(path, _csv_text(LOG_COLUMNS, rows))


def read_log_csv(path):
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def write_trajectory_csv(path, model, params, q):
    """Positions and physical velocities of every agent at normalized times q."""
    q = np.asarray(q, dtype=float)
    pos = model.positions(params, q)
    vel = model.velocities(params, q) / params.T
    if pos.ndim == 2:
        pos, vel = pos[..., None], vel[..., None]
    rows = []
    for k in range(q.size):
        for j in range(pos.shape[1]):
            for p in range(pos.shape[2]):
                rows.append([_fmt(q[k]), j, p, _fmt(pos[k, j, p]), _fmt(vel[k, j, p])])
    atomic_write_text(path, _csv_text(TRAJECTORY_COLUMNS, rows))


def covariance_columns(L):
    return ["q", "target", "trace"] + [f"w{r}{c}" for r in range(L) for c in range(r, L)]


def write_covariance_csv(path, trajectories, T=1.0):
    """Trace and upper triangle of every target covariance at the RK4 nodes.

    Steady trajectories are already on normalized time; transient ones are
    divided by ``T``. Targets with fewer states leave trailing columns empty.
    """
    L = max(tr.omega.shape[1] for tr in trajectories)
    header = covariance_columns(L)
    rows = []
    for i, tr in enumerate(trajectories):
        q = tr.grid if tr.steady else tr.grid / T
        iu = np.triu_indices(tr.omega.shape[1])
        width = len(header) - 3
        for k in range(q.size):
            W = tr.omega[k]
            vals = [_fmt(v) for v in W[iu]]
            rows.append([_fmt(q[k]), i, _fmt(np.trace(W))] + vals + [""] * (width - len(vals)))
    atomic_write_text(path, _csv_text(header, rows))
