"""Shared fixtures: discretizations and solved pressure pipelines."""
import numpy as np
import pytest

from cgflux.darcy import CoefficientField, assemble, solve_pressure
from cgflux.mesh import build_dof_map, build_dual_mesh, build_structured_mesh
from cgflux.postprocess import postprocess


def discretize(n, order):
    mesh = build_structured_mesh(n)
    dofmap = build_dof_map(mesh, order)
    dual = build_dual_mesh(mesh, dofmap)
    return mesh, dofmap, dual


def solve_problem(problem, n, order, method="cg"):
    """Single-phase pressure solve + post-processing for a registry problem."""
    mesh, dofmap, dual = discretize(n, order)
    K = CoefficientField(kappa=problem.kappa)
    system = assemble(mesh, dofmap, K, q=problem.q, g_D=problem.g_D,
                      g_N=problem.g_N)
    pressure = solve_pressure(system, method=method)
    flux = postprocess(mesh, dofmap, dual, K, pressure, q=problem.q,
                       g_N=problem.g_N, quad_degree=system.quad_degree)
    return mesh, dofmap, dual, K, pressure, flux


def uniform_flow(n, order):
    """kappa=1, p = 1 - x1: the exact solution lies in every V^k."""
    mesh, dofmap, dual = discretize(n, order)
    K = CoefficientField(kappa=lambda x: np.ones(np.asarray(x).shape[:-1]))
    system = assemble(mesh, dofmap, K,
                      g_D=lambda x: 1.0 - np.asarray(x)[..., 0],
                      g_N=lambda x: np.zeros(np.asarray(x).shape[:-1]))
    pressure = solve_pressure(system)
    flux = postprocess(mesh, dofmap, dual, K, pressure,
                       quad_degree=system.quad_degree)
    return mesh, dofmap, dual, K, pressure, flux


@pytest.fixture(scope="session")
def small_grids():
    """(mesh, dofmap, dual) for (n=4, k=1) and (n=4, k=2)."""
    return {order: discretize(4, order) for order in (1, 2)}
