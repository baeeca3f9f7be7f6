"""Delayed reentrant coupling of a symbolic token graph and a geometric node graph."""

from .graphs import WeightedGraph, complete_graph, cycle_graph, laplacian_matrix, path_graph, spectral_gap
from .coupling import GateSpec, GatedMixtureKernel, FixedKernel, family_budget, hs_norm
from .state import ArchitectureConfig, ConfigError, HistoryBuffer, StateVector
from .fields import FieldParams
from .stages import StepAborted, StepEngine
from .integrator import InputStream, find_equilibrium, integrate, residual_norm
from .stability import build_report, small_gain_check
from .scenarios import build_k3p3, build_k3p3_valuation, k3p3_equilibrium, scenario

__version__ = "0.1.0"
