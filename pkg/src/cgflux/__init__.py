"""cgflux: locally conservative CGFEM flow with finite-volume transport."""
from .coupling import MarchResult, TimeGrid, project_saturation_to_elements, \
    time_march
from .darcy import AssembledSystem, CoefficientField, PressureField, assemble, \
    solve_pressure, stiffness_quad_degree
from .diagnostics import ConvergenceStudy, convergence_order, h1_semi_error, \
    l2_saturation_error, l2_saturation_error_discrete
from .errors import CgfluxError, CflError, CoefficientError, \
    CompatibilityError, ConfigError, ConservationGateError, \
    NonConvergenceError, UnknownProblemError
from .linalg import cg_solve, solve_singular_neumann
from .mesh import DofMap, DualMesh, TriMesh, build_dof_map, build_dual_mesh, \
    build_structured_mesh, locate_points, write_vtk
from .postprocess import FluxField, cv_source, extract_fluxes, lce, \
    postprocess, raw_fluxes
from .problems import ProblemSpec, fractional_flow, problem_names, registry, \
    total_mobility
from .transport import FaceGraph, SaturationField, build_face_graph, cfl_dt, \
    fvm_step

__version__ = "0.1.0"

__all__ = [
    "AssembledSystem", "CgfluxError", "CflError", "CoefficientError",
    "CoefficientField", "CompatibilityError", "ConfigError",
    "ConservationGateError", "ConvergenceStudy", "DofMap", "DualMesh",
    "FaceGraph", "FluxField", "MarchResult", "NonConvergenceError",
    "PressureField", "ProblemSpec", "SaturationField", "TimeGrid", "TriMesh",
    "UnknownProblemError", "assemble", "build_dof_map", "build_dual_mesh",
    "build_face_graph", "build_structured_mesh", "cfl_dt", "cg_solve",
    "convergence_order", "cv_source", "extract_fluxes", "fractional_flow",
    "fvm_step", "h1_semi_error", "l2_saturation_error",
    "l2_saturation_error_discrete", "lce", "locate_points", "postprocess",
    "problem_names", "project_saturation_to_elements", "raw_fluxes",
    "registry", "solve_pressure", "solve_singular_neumann",
    "stiffness_quad_degree", "time_march", "total_mobility", "write_vtk",
]
