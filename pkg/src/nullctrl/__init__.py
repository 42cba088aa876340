"""Numerical null controllability of coupled parabolic systems with one scalar control."""
from .errors import NullCtrlError
from .geometry import Grid, Subdomain, SubdomainFamily, build_family, build_grid
from .coupling import CoefficientSet, CouplingTree, kalman_matrix, kalman_rank, validate_tree
from .weights import WeightFamily, build_weight_family, check_weight_order, sigma_sequence
from .pde import ControlField, TrajectoryField, solve_adjoint, solve_forward
from .hum import ControlProblem, eps_sweep, solve_penalized
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "NullCtrlError",
    "Grid",
    "Subdomain",
    "SubdomainFamily",
    "build_family",
    "build_grid",
    "CoefficientSet",
    "CouplingTree",
    "kalman_matrix",
    "kalman_rank",
    "validate_tree",
    "WeightFamily",
    "build_weight_family",
    "check_weight_order",
    "sigma_sequence",
    "ControlField",
    "TrajectoryField",
    "solve_adjoint",
    "solve_forward",
    "ControlProblem",
    "eps_sweep",
    "solve_penalized",
    "Scenario",
    "load_scenario",
]
