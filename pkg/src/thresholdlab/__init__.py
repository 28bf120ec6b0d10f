"""Numerical laboratory for coupling-constant thresholds of few-body Schroedinger operators."""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .model import PairPotential, SystemSpec
from .jacobi import JacobiFrame, build_frame, kinematic_rotation
from .twobody import (RadialGrid, ThresholdReport, bound_states, critical_coupling_2b, defs_probe,
                      resonance_check, scattering_length)
from .bsreg import c0_constant, find_omega, rtau_norm_bound, wegot_bound_check
from .fewbody import (StochasticVariationalSolver, absorption_trace, critical_coupling_nb,
                      subsystem_preconditions)
from .diagnostics import no_clustering_report, size_scaling_report, tail_bound_probe

__all__ = [
    "__version__", "PairPotential", "SystemSpec", "JacobiFrame", "build_frame", "kinematic_rotation",
    "RadialGrid", "ThresholdReport", "bound_states", "critical_coupling_2b", "defs_probe",
    "resonance_check", "scattering_length", "c0_constant", "find_omega", "rtau_norm_bound",
    "wegot_bound_check", "StochasticVariationalSolver", "absorption_trace", "critical_coupling_nb",
    "subsystem_preconditions", "no_clustering_report", "size_scaling_report", "tail_bound_probe",
]
