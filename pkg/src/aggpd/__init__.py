"""Distributed aggregative optimization with coupled affine inequality constraints."""

from .problem import AggregativeProblem, Constants, QuadraticInstance, estimate_constants, quadratic_instance
from .topology import MixingNetwork, exponential_network, random_network, ring_network, spectral_report
from .solver import DivergenceError, StepSizes, StopRule, init, run, step_distributed, step_matrix
from .oracle import build_fixed_point, kkt_residuals, solve_kkt_dual, solve_kkt_quadratic
from .analysis import certify, fit_rate, lyapunov

__version__ = "0.1.0"
