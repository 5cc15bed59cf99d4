"""Rate-distortion computation for lower semi-continuous distortions.

The package computes ``R(D)`` through the dual functional
``J_beta(nu) = -E_mu log E_nu exp(-beta rho)`` and ships
concentration-compactness diagnostics for sequences of measures.
"""
from .distortion import DistortionSpec
from .errors import CertificateError, InputError, PerturbationInfeasible, RDError, SolverError
from .measure import DiscreteMeasure, MetricAlphabet, SubMeasure
from .solver import SolverConfig, compute_F, rd_curve, solve_fixed_support

__version__ = "0.1.0"

__all__ = [
    "CertificateError", "DiscreteMeasure", "DistortionSpec", "InputError", "MetricAlphabet",
    "PerturbationInfeasible", "RDError", "SolverConfig", "SolverError", "SubMeasure",
    "compute_F", "rd_curve", "solve_fixed_support",
]
