"""Continuum-rod backbone shape estimation on a factor graph with Magnus-expansion kinematics."""

__version__ = "0.1.0"

from .basis import BasisConfig, eval_strain, fit_coeffs
from .factors import FactorGraph, MeasurementSet, Sensor, Values, build_graph
from .magnus import dense_query, integrate_nodes, magnus_increment
from .scenario import Scenario, load_scenario, preset
from .solver import SolveReport, SolverSettings, solve

__all__ = [
    "BasisConfig",
    "FactorGraph",
    "MeasurementSet",
    "Scenario",
    "Sensor",
    "SolveReport",
    "SolverSettings",
    "Values",
    "build_graph",
    "dense_query",
    "eval_strain",
    "fit_coeffs",
    "integrate_nodes",
    "load_scenario",
    "magnus_increment",
    "preset",
    "solve",
]
