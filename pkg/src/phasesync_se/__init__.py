"""Power-system state estimation by phase synchronization: spectral initialization,
Gauss-Newton refinement and dual optimality certificates."""
from .estimator import Certificate, EstimateReport, EstimatorConfig, VoltageState, certify, estimate, spectral_init
from .hbuilder import PhaseSyncProblem, assemble
from .measurement import Kind, Measurement, MeasurementPlan, MeasurementSet, cost, simulate
from .netmodel import Network, load_case, parse_case

__all__ = ["Certificate", "EstimateReport", "EstimatorConfig", "VoltageState", "certify", "estimate", "spectral_init",
           "PhaseSyncProblem", "assemble", "Kind", "Measurement", "MeasurementPlan", "MeasurementSet", "cost",
           "simulate", "Network", "load_case", "parse_case"]
__version__ = "0.1.0"
