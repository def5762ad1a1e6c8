"""Numerical laboratory for stochastic homogenization of degenerate random elliptic operators."""

__version__ = "0.1.0"

from .fields import (CoefficientField, EnsembleModel, GridSpec, Partition, build_partition,
                     check_moment_condition, empirical_K, mu_lambda, sample_field)
from .io import read_field, write_field
from .kernels import BACKEND
from .radii import RadiusReport, ellipticity_radius, minimal_radius, radius_report
from .solver import CorrectorSolution, assemble_operator, compute_correctors, solve_corrector

__all__ = [
    "BACKEND",
    "CoefficientField",
    "CorrectorSolution",
    "EnsembleModel",
    "GridSpec",
    "Partition",
    "RadiusReport",
    "assemble_operator",
    "build_partition",
    "check_moment_condition",
    "compute_correctors",
    "ellipticity_radius",
    "empirical_K",
    "minimal_radius",
    "mu_lambda",
    "radius_report",
    "read_field",
    "sample_field",
    "solve_corrector",
    "write_field",
]
