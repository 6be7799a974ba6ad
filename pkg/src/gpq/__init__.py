"""Gaussian-process regression, Bayesian optimization and trend-following allocation."""

from .errors import DataError, GpqError, InvalidArgument, NonConvergence, NumericalFailure, WindowError
from .gp import GaussianPosterior, GpModel, condition_gaussian, fit, posterior, sor_posterior
from .kernels import parse_kernel

__all__ = [
    "DataError",
    "GaussianPosterior",
    "GpModel",
    "GpqError",
    "InvalidArgument",
    "NonConvergence",
    "NumericalFailure",
    "WindowError",
    "condition_gaussian",
    "fit",
    "parse_kernel",
    "posterior",
    "sor_posterior",
]
