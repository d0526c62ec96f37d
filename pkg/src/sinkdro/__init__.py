"""sinkdro: distributionally robust optimization over Sinkhorn-distance balls.

Solves min_theta sup_P {E_P[f_theta] : P within Sinkhorn distance rho of the
empirical distribution} through the entropic dual: bisection over the dual
multiplier wrapping a projected-subgradient inner solver on Monte Carlo pools
drawn from the cost's Gaussian smoothing kernels. Ships exact finite-space
solvers, worst-case distribution sampling, KL / Wasserstein / SAA baselines,
three application losses, and a reproducible benchmark CLI.
"""

from ._kernels import BACKEND
from .core import (
    QUADRATIC,
    MAHALANOBIS,
    FEATURE_LABEL,
    Ball,
    Box,
    CallableLoss,
    CostSpec,
    EmpiricalDistribution,
    FeasibleSet,
    KernelSampler,
    LossModel,
    SeedSpec,
    Simplex,
    SimplexTimesReal,
    Unconstrained,
    compute_rho_bar,
    kernel_sample,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "QUADRATIC",
    "MAHALANOBIS",
    "FEATURE_LABEL",
    "Ball",
    "Box",
    "CallableLoss",
    "CostSpec",
    "EmpiricalDistribution",
    "FeasibleSet",
    "KernelSampler",
    "LossModel",
    "SeedSpec",
    "Simplex",
    "SimplexTimesReal",
    "Unconstrained",
    "compute_rho_bar",
    "kernel_sample",
    "__version__",
]
