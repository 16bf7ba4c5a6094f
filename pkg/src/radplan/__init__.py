"""Radial solutions of  Lap u = a(|x|) h(u) + b(|x|) g(u)  by successive
approximation, checks of their envelope bounds and convexity, and the
stochastic production-planning model built on them."""
from .errors import (
    BlowUpError, DomainError, EnvelopeRangeError, ExtrapolationError, InvalidModelError,
    NumericError, RadplanError, UnsupportedDimensionError, ValidationError,
)
from .nonlinearity import HTransform, NonlinearityPair, eval_H, eval_H_inv, validate_pair
from .radial_solver import GridConfig, RadialProblem, RadialSolution, ode_oracle, picard_solve
from .analysis import check_bounds, check_convexity, classify, limit_identity, p_bar, p_under
from .planning_model import (
    PlanningModel, PolicyField, build_model, hamiltonian_argmin_check, hjb_residual,
    optimal_control, policy_field, value_function,
)
from .sde_sim import SimConfig, compare_policies, discounted_cost, simulate_paths, transversality_check

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "DomainError", "EnvelopeRangeError", "ExtrapolationError", "InvalidModelError",
    "NumericError", "RadplanError", "UnsupportedDimensionError", "ValidationError",
    "HTransform", "NonlinearityPair", "eval_H", "eval_H_inv", "validate_pair",
    "GridConfig", "RadialProblem", "RadialSolution", "ode_oracle", "picard_solve",
    "check_bounds", "check_convexity", "classify", "limit_identity", "p_bar", "p_under",
    "PlanningModel", "PolicyField", "build_model", "hamiltonian_argmin_check", "hjb_residual",
    "optimal_control", "policy_field", "value_function",
    "SimConfig", "compare_policies", "discounted_cost", "simulate_paths", "transversality_check",
]
