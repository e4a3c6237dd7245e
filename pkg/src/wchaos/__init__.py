"""Wiener chaos (Cameron-Martin) expansion solver for linear stochastic
evolution equations: deterministic propagator integration, random-field
reconstruction and moments, and chaos-based nonlinear filtering of
diffusions."""

from .basis import GaussianCoordinates, TestDirection, TimeBasis, hermite
from .kernels import active_backend
from .multiindex import (EMPTY, MultiIndex, TruncationSpec, c_coeff,
                         enumerate_indices, is_complete, product_expand, psi)
from .propagator import (PropagatorSolution, SpdeProblem, TimeGrid,
                         convergence_report, level_energy, solve, total_energy)
from .spatial import (IntervalGrid, OperatorSpec, PeriodicGrid,
                      parabolicity_report)

__version__ = "0.1.0"

__all__ = [
    "EMPTY", "GaussianCoordinates", "IntervalGrid", "MultiIndex",
    "OperatorSpec", "PeriodicGrid", "PropagatorSolution", "SpdeProblem",
    "TestDirection", "TimeBasis", "TimeGrid", "TruncationSpec",
    "active_backend", "c_coeff", "convergence_report", "enumerate_indices",
    "hermite", "is_complete", "level_energy", "parabolicity_report",
    "product_expand", "psi", "solve", "total_energy",
]
