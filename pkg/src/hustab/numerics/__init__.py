"""Numerical kernels: adaptive ODE stepping, damped improper quadrature,
central finite differences."""
from .finite_diff import directional_derivative, fd_step
from .kernels import available_backends, backend_name, use_backend
from .ode import Trajectory, solve_ivp
from .quadrature import (
    DampedIntegrand,
    QuadInfo,
    QuadPlan,
    arith_lambda,
    damped_partial_integrals,
    damped_sum,
    eval_curve,
    horizon,
    quad_exp_decay,
    require_nonzero_real,
    tail_bound,
)
from .tolerances import Tolerances

__all__ = [
    "DampedIntegrand",
    "QuadInfo",
    "QuadPlan",
    "Tolerances",
    "Trajectory",
    "arith_lambda",
    "available_backends",
    "backend_name",
    "damped_partial_integrals",
    "damped_sum",
    "directional_derivative",
    "eval_curve",
    "fd_step",
    "horizon",
    "quad_exp_decay",
    "require_nonzero_real",
    "solve_ivp",
    "tail_bound",
    "use_backend",
]
