"""Finite-element model of linear elasticity coupled to a dynamic elastic
boundary: phase-space operators, a dissipative time integrator, spectral
and decay diagnostics, and multiplier-identity audits.
"""

from .assembly import MaterialParams, SystemMatrices, build_system
from .config import ScenarioConfig, load_config, parse_config
from .errors import (AssumptionError, AuditError, ElastowaveError, GeometricConditionError, MeshError,
                     ParameterError, RegionOverlapError, SolverError, StateError)
from .evolution import Trajectory, integrate, solve_resolvent, spectral_abscissa
from .geometry import GAMMA0, GAMMA1, Mesh, build_mesh, build_region_fields, classify_boundary, compute_boundary_frames
from .state import State
from .tangential import BoundaryField

__version__ = "0.1.0"

__all__ = [
    "AssumptionError", "AuditError", "BoundaryField", "ElastowaveError", "GAMMA0", "GAMMA1",
    "GeometricConditionError", "MaterialParams", "Mesh", "MeshError", "ParameterError",
    "RegionOverlapError", "ScenarioConfig", "SolverError", "State", "StateError", "SystemMatrices",
    "Trajectory", "build_mesh", "build_region_fields", "build_system", "classify_boundary",
    "compute_boundary_frames", "integrate", "load_config", "parse_config", "solve_resolvent",
    "spectral_abscissa",
]
