import numpy as np
import pytest

from cgflux.coupling import (MarchResult, TimeGrid, initial_saturation,
                             project_saturation_to_elements, time_march)
from cgflux.problems import ProblemSpec, registry, zero
from cgflux.transport import SaturationField

from conftest import discretize


def test_time_grid_properties():
    grid = TimeGrid(1.0, 4, 10)
    assert grid.dt_coarse == pytest.approx(0.25)
    assert grid.dt_fine == pytest.approx(0.025)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 4, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0, 10)


def test_project_constant_saturation(small_grids):
    mesh, dofmap, dual = small_grids[2]
    sat = SaturationField(np.full(dofmap.n_dofs, 0.42))
    assert np.allclose(project_saturation_to_elements(sat, dual, dofmap), 0.42,
                       atol=1e-14)


def test_project_is_convex_combination(small_grids):
    mesh, dofmap, dual = small_grids[1]
    rng = np.random.default_rng(13)
    sat = SaturationField(rng.uniform(0.0, 1.0, dofmap.n_dofs))
    proj = project_saturation_to_elements(sat, dual, dofmap)
    local = sat.values[dofmap.elem_dofs]
    assert np.all(proj >= local.min(axis=1) - 1e-14)
    assert np.all(proj <= local.max(axis=1) + 1e-14)


def test_project_p1_equal_areas(small_grids):
    """P1 pieces have equal area, so values (0,0,1) project to 1/3."""
    mesh, dofmap, dual = small_grids[1]
    vals = np.zeros(dofmap.n_dofs)
    vals[dofmap.elem_dofs[0, 2]] = 1.0
    others = dofmap.elem_dofs[0, :2]
    vals[others] = 0.0
    proj = project_saturation_to_elements(SaturationField(vals), dual, dofmap)
    assert proj[0] == pytest.approx(1.0 / 3, abs=1e-13)


def test_initial_saturation_samples_dof_coords(small_grids):
    mesh, dofmap, dual = small_grids[1]
    prob = registry("ex1-3")
    sat = initial_saturation(prob, dofmap)
    assert np.allclose(sat.values, prob.s_initial(dofmap.dof_coords))
    assert sat.time == 0.0


def test_zero_initial_zero_inflow_stays_zero():
    prob_base = registry("ex1-1")
    prob = ProblemSpec(name="quiet", kappa=prob_base.kappa,
                       fractional=prob_base.fractional, s_initial=zero,
                       t_final=0.01, single_phase=True,
                       inflow_saturation=0.0)
    mesh, dofmap, dual = discretize(8, 1)
    result = time_march(prob, TimeGrid(0.01, 2, 5), mesh, dofmap, dual)
    assert np.abs(result.saturation.values).max() < 1e-14


def test_single_phase_pressure_solved_once():
    prob = registry("ex1-1")
    mesh, dofmap, dual = discretize(8, 1)
    result = time_march(prob, TimeGrid(0.01, 3, 5), mesh, dofmap, dual)
    iters = [r.cg_iterations for r in result.records]
    assert len(set(iters)) == 1          # same pressure object reused
    assert all(r.max_lce <= 1e-12 for r in result.records)


def test_records_and_snapshots():
    prob = registry("ex1-1")
    mesh, dofmap, dual = discretize(8, 1)
    result = time_march(prob, TimeGrid(0.01, 4, 5), mesh, dofmap, dual,
                        snapshot_every=2)
    assert isinstance(result, MarchResult)
    assert [r.step for r in result.records] == [1, 2, 3, 4]
    assert result.records[-1].time == pytest.approx(0.01)
    assert [s for s, _ in result.snapshots] == [2, 4]
    assert np.all(np.diff([r.mass for r in result.records]) > 0)  # inflow


def test_two_phase_march_max_principle():
    prob = registry("ex2-1")
    mesh, dofmap, dual = discretize(8, 1)
    result = time_march(prob, TimeGrid(0.02, 4, 20), mesh, dofmap, dual)
    assert result.saturation.values.min() >= -1e-12
    assert result.saturation.values.max() <= 1.0 + 1e-12


def test_two_phase_inner_iterations_converge_same_direction():
    """M_n > 1 re-solves pressure within the step; results stay close to the
    single-iteration march on a short horizon."""
    prob = registry("ex2-1")
    mesh, dofmap, dual = discretize(8, 1)
    r1 = time_march(prob, TimeGrid(0.01, 2, 10), mesh, dofmap, dual)
    r2 = time_march(prob, TimeGrid(0.01, 2, 10, n_iter=2), mesh, dofmap, dual)
    diff = np.abs(r1.saturation.values - r2.saturation.values).max()
    assert 0.0 <= diff < 0.05


def test_cfl_mode_reaches_final_time():
    prob = registry("ex1-1")
    mesh, dofmap, dual = discretize(8, 1)
    result = time_march(prob, TimeGrid(0.01, 2, 1), mesh, dofmap, dual,
                        cfl_mode=True)
    assert result.saturation.time == pytest.approx(0.01, abs=1e-12)
    assert result.saturation.values.max() <= 1.0 + 1e-12
