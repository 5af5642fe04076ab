"""Single-index conditional copula estimation."""

from .copulas import CopulaModel, clamp_unit, log_density, sample, tau_to_theta, theta_to_tau
from .cond_ecdf import Dataset, TrimBox
from .errors import (
    EmptyWindowError,
    InsufficientDataError,
    InsufficientSupportError,
    NonFiniteCriterionError,
    SicopulaError,
    SingularHessianError,
)
from .estimator import EstimationConfig, FitResult, IndexParam, fit
from .kernels import KernelSpec, eval_kernel, make_higher_order, product_weight
from .simulate import DGPSpec, ReplicationReport, generate, run_replications

__all__ = [
    "CopulaModel",
    "DGPSpec",
    "Dataset",
    "EmptyWindowError",
    "EstimationConfig",
    "FitResult",
    "IndexParam",
    "InsufficientDataError",
    "InsufficientSupportError",
    "KernelSpec",
    "NonFiniteCriterionError",
    "ReplicationReport",
    "SicopulaError",
    "SingularHessianError",
    "TrimBox",
    "clamp_unit",
    "eval_kernel",
    "fit",
    "generate",
    "log_density",
    "make_higher_order",
    "product_weight",
    "run_replications",
    "sample",
    "tau_to_theta",
    "theta_to_tau",
]

__version__ = "0.1.0"
