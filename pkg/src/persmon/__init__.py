"""Persistent monitoring of linear stochastic targets by mobile agents.

Kalman-Bucy covariance propagation, periodic steady states and their
parameter sensitivities, dwell/move and Fourier trajectory
parameterizations, MTSP-based initialization and projected gradient
descent.
"""
from .covariance import (
    CovarianceTrajectory,
    propagate_covariance,
    simulate_kalman_bucy,
    solve_discrete_lyapunov,
    solve_periodic_riccati,
    steady_state_sensitivity,
)
from .errors import (
    ContractionError,
    DivergenceError,
    InfeasibleFitError,
    InvalidArgument,
    NeverVisitedError,
    NonConvergenceError,
    PersmonError,
    PreconditionError,
    ProjectionError,
    ScenarioError,
)
from .fourier import FourierModel, ParamsFourier, fourier_position
from .initializer import GAConfig, Schedule, fourier_fit, mtsp_solve, schedule_to_params_1d
from .io import load_params, load_run_config, params_from_dict, params_to_dict, save_params
from .optimizer import (
    DescentConfig,
    cost_steady,
    cost_transient,
    descend,
    evaluate,
    gradient_steady,
    gradient_transient,
)
from .scenario import AgentSpec, Scenario, TargetSpec, load_scenario, uniform_scenario
from .traj1d import (
    DwellMoveModel,
    Params1D,
    Policy1D,
    canonicalize_policy_1d,
    policy_from_params,
    position_1d,
    project_params_1d,
)

__version__ = "0.1.0"
