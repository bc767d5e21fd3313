"""Numerical laboratory for a stochastic generalized Burgers equation.

Simulates u_t = a u_xx + b u_x + c u + bbar |u|^lam u_x + sigma(u) * noise
on a periodic or zero-boundary grid, with two diffusion-coefficient regimes
(bounded Lipschitz and superlinear), and estimates Holder regularity, mass
bounds, and non-explosion statistics over Monte Carlo ensembles.
"""

__version__ = "0.1.0"

from .exceptions import ConfigurationError, NumericalError, SingularityError
from .noise import (
    BasisFamily,
    GridSpec,
    NoiseField,
    generate_rectangle_noise,
    generate_series_noise,
    validate_covariance,
)
from .solver import (
    CutoffFn,
    EnsembleSummary,
    ProblemSpec,
    SolutionPath,
    cutoff_drift,
    cutoff_eval,
    evolve,
    run_ensemble,
    step,
)
from .kernels import (
    BesselKernel,
    SobolevNorm,
    bessel_kernel_eval,
    check_multiplicative_inequality,
    fractional_norm,
    holder_seminorm,
)
from .estimator import (
    EstimatorReport,
    Window,
    mass_bound_check,
    nonexplosion_curve,
    structure_function,
    verify_case1_exponents,
    verify_case2_exponents,
)
from .harness import ExperimentConfig, preset_list, run_experiment

__all__ = [
    "BasisFamily",
    "BesselKernel",
    "ConfigurationError",
    "CutoffFn",
    "EnsembleSummary",
    "EstimatorReport",
    "ExperimentConfig",
    "GridSpec",
    "NoiseField",
    "NumericalError",
    "ProblemSpec",
    "SingularityError",
    "SobolevNorm",
    "SolutionPath",
    "Window",
    "bessel_kernel_eval",
    "check_multiplicative_inequality",
    "cutoff_drift",
    "cutoff_eval",
    "evolve",
    "fractional_norm",
    "generate_rectangle_noise",
    "generate_series_noise",
    "holder_seminorm",
    "mass_bound_check",
    "nonexplosion_curve",
    "preset_list",
    "run_ensemble",
    "run_experiment",
    "step",
    "structure_function",
    "validate_covariance",
    "verify_case1_exponents",
    "verify_case2_exponents",
]
