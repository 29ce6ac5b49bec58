"""
Tests for the grid discretization, the discrete energy and snapshots
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from core.errors import DomainError, ParameterError
from core.field import (
    FieldPair,
    Grid,
    MaterialParams,
    cell_gradient,
    elastic_mismatch,
    elastic_objective,
    elastic_operator,
    energy,
    field_mean,
    interface_length,
    interpolate,
    lumped_mass,
    phase_gradient,
    point_gradients,
    read_snapshot,
    scatter,
    symmetrized_gradient,
    well_fraction,
    write_snapshot,
)
from core.tensor import Misfit, isotropic_stiffness
from core.wellmodel import ChemParams, eval_f

E0 = Misfit(0.0, 1.0, 0.0)


def make_params(epsilon=0.1, e0=E0):
    return MaterialParams.build(ChemParams(omega=3.0, kt=1.0), isotropic_stiffness(1.0, 1.0), e0, epsilon)


def unit_grid(n=17):
    return Grid(nx=n, ny=n, lx=1.0, ly=1.0, origin=(-0.5, -0.5))


def test_grid_geometry():
    g = Grid(nx=5, ny=3, lx=2.0, ly=1.0, origin=(1.0, -1.0))
    assert g.hx == 0.5 and g.hy == 0.5
    x, y = g.coordinates()
    assert x.shape == (5, 3)
    assert x[-1, 0] == pytest.approx(3.0) and y[0, -1] == pytest.approx(0.0)
    assert g.boundary_mask().sum() == 5 * 3 - 3 * 1
    with pytest.raises(ParameterError):
        Grid(nx=1, ny=3, lx=1.0, ly=1.0)


def test_box_grid_is_never_coarser():
    g = Grid.box(-0.5, 0.5, -0.25, 0.25, 0.03)
    assert g.hx <= 0.03 and g.hy <= 0.03
    assert g.origin == (-0.5, -0.25)


def test_field_pair_rejects_out_of_range_phase():
    g = unit_grid(5)
    with pytest.raises(DomainError):
        FieldPair(c=np.full((5, 5), 1.5), u=np.zeros((5, 5, 2)), grid=g)
    with pytest.raises(ParameterError):
        FieldPair(c=np.zeros((4, 5)), u=np.zeros((5, 5, 2)), grid=g)


def test_affine_strain_is_exact():
    g = Grid(nx=9, ny=13, lx=1.3, ly=2.1, origin=(-0.4, 0.2))
    u = g.points() @ E0.matrix.T
    e = symmetrized_gradient(u, g)
    assert np.max(np.abs(e - E0.matrix)) <= 1e-13


def test_skew_field_has_no_strain():
    g = unit_grid(11)
    x, y = g.coordinates()
    u = np.stack([-0.7 * y, 0.7 * x], axis=-1)
    assert np.max(np.abs(symmetrized_gradient(u, g))) <= 1e-13


def test_quadratic_shear_at_cell_centers():
    g = unit_grid(21)
    x, y = g.coordinates()
    u = np.stack([y * y, np.zeros_like(y)], axis=-1)
    e = symmetrized_gradient(u, g)
    _, yc = g.cell_centers()
    assert np.max(np.abs(e[..., 0, 1] - yc)) <= 1e-12
    assert np.max(np.abs(e[..., 0, 0])) <= 1e-12 and np.max(np.abs(e[..., 1, 1])) <= 1e-12


def test_scalar_cell_gradient_shape():
    g = unit_grid(6)
    x, y = g.coordinates()
    grad = cell_gradient(2.0 * x - 3.0 * y, g)
    assert grad.shape == (5, 5, 2)
    assert np.allclose(grad[..., 0], 2.0) and np.allclose(grad[..., 1], -3.0)


def test_scatter_is_the_adjoint():
    g = Grid(nx=6, ny=5, lx=1.0, ly=0.7)
    rng = np.random.default_rng(0)
    w = rng.normal(size=(g.nx, g.ny))
    gv, gx, gy = (rng.normal(size=(4, g.nx - 1, g.ny - 1)) for _ in range(3))
    dx, dy = point_gradients(w, g)
    lhs = float(np.sum(scatter(g, gv=gv, gx=gx, gy=gy) * w))
    rhs = float(np.sum(gv * interpolate(w) + gx * dx + gy * dy))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_lumped_mass_and_mean():
    g = Grid(nx=7, ny=4, lx=3.0, ly=0.5)
    assert lumped_mass(g).sum() == pytest.approx(g.area, rel=1e-14)
    assert field_mean(np.full((7, 4), 0.3), g) == pytest.approx(0.3, abs=1e-15)


def test_ground_state_has_zero_energy():
    params = make_params()
    g = unit_grid()
    w = params.wells
    fp = FieldPair(c=np.full((g.nx, g.ny), w.mu0), u=w.mu0 * (g.points() @ E0.matrix.T), grid=g)
    e = energy(fp, params)
    assert abs(e.total) <= 1e-12
    assert abs(e.chem) <= 1e-12 and abs(e.grad) <= 1e-12 and abs(e.elastic) <= 1e-12


def test_uniform_state_energy():
    params = make_params(epsilon=0.05)
    g = Grid(nx=9, ny=5, lx=2.0, ly=1.0)
    fp = FieldPair(c=np.full((g.nx, g.ny), 0.5), u=0.5 * (g.points() @ E0.matrix.T), grid=g)
    e = energy(fp, params)
    expected = eval_f(params.chem, params.wells, 0.5) * g.area / params.epsilon
    assert e.total == pytest.approx(expected, rel=1e-12)
    assert abs(e.grad) <= 1e-12 and abs(e.elastic) <= 1e-12


def test_energy_parts_and_density():
    params = make_params()
    g = unit_grid(9)
    rng = np.random.default_rng(1)
    fp = FieldPair(c=rng.uniform(0.0, 1.0, (9, 9)), u=0.1 * rng.normal(size=(9, 9, 2)), grid=g)
    e = energy(fp, params, with_density=True)
    assert min(e.chem, e.grad, e.elastic) >= -1e-12
    assert e.total == pytest.approx(e.chem + e.grad + e.elastic, rel=1e-12)
    assert e.density.shape == (8, 8)
    assert float(np.sum(e.density)) * g.cell_area == pytest.approx(e.total, rel=1e-12)
    assert set(e.as_dict()) == {"chem", "grad", "elastic", "total"}


def test_masked_energy_sums_to_total():
    params = make_params()
    g = unit_grid(9)
    rng = np.random.default_rng(2)
    fp = FieldPair(c=rng.uniform(0.0, 1.0, (9, 9)), u=0.1 * rng.normal(size=(9, 9, 2)), grid=g)
    mask = np.zeros((8, 8), dtype=bool)
    mask[:, :3] = True
    inside, outside = energy(fp, params, mask=mask).total, energy(fp, params, mask=~mask).total
    assert inside + outside == pytest.approx(energy(fp, params).total, rel=1e-12)


def test_energy_invariant_under_skew_affine_displacements():
    params = make_params()
    g = unit_grid(9)
    rng = np.random.default_rng(3)
    fp = FieldPair(c=rng.uniform(0.1, 0.9, (9, 9)), u=0.1 * rng.normal(size=(9, 9, 2)), grid=g)
    x, y = g.coordinates()
    moved = fp.copy()
    moved.u = fp.u + np.stack([-0.3 * y + 2.0, 0.3 * x - 1.0], axis=-1)
    assert energy(moved, params).total == pytest.approx(energy(fp, params).total, rel=1e-11)


def test_elastic_mismatch_constant_integrand():
    params = make_params()
    g = unit_grid(5)
    w = params.wells
    fp = FieldPair(c=np.full((5, 5), w.mu1), u=np.zeros((5, 5, 2)), grid=g)
    assert elastic_mismatch(fp, E0, w) == pytest.approx(w.mu1 * math.sqrt(2.0), rel=1e-12)


def test_phase_gradient_matches_finite_differences():
    params = make_params()
    g = unit_grid(9)
    rng = np.random.default_rng(4)
    fp = FieldPair(c=rng.uniform(0.2, 0.8, (9, 9)), u=0.1 * rng.normal(size=(9, 9, 2)), grid=g)
    grad = phase_gradient(fp, params)
    h = 1e-6
    for i, j in ((4, 4), (0, 3), (8, 8)):
        up, down = fp.copy(), fp.copy()
        up.c[i, j] += h
        down.c[i, j] -= h
        fd = (energy(up, params).total - energy(down, params).total) / (2.0 * h)
        assert grad[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_elastic_operator_is_symmetric_and_consistent():
    params = make_params()
    C = params.stiffness
    g = Grid(nx=7, ny=6, lx=1.0, ly=0.8)
    rng = np.random.default_rng(5)
    v, w = rng.normal(size=(2, g.nx, g.ny, 2))
    assert float(np.sum(elastic_operator(v, C, g) * w)) == pytest.approx(
        float(np.sum(v * elastic_operator(w, C, g))), rel=1e-12)

    c = np.zeros((g.nx, g.ny))
    fp = FieldPair(c=c, u=v, grid=g)
    assert elastic_objective(fp, C, E0) == pytest.approx(float(np.sum(v * elastic_operator(v, C, g))), rel=1e-12)


def test_diagnostics_on_flat_interface():
    params = make_params()
    w = params.wells
    g = unit_grid(17)
    _, y = g.coordinates()
    c = np.where(y > 0.0, w.mu1, w.mu0)
    assert well_fraction(c, w) == 1.0
    assert abs(interface_length(c, g, w) - 1.0) <= g.hx + 1e-12
    assert well_fraction(np.full((17, 17), 0.5), w) == 0.0


def test_snapshot_round_trip(tmp_path):
    g = Grid(nx=4, ny=3, lx=1.0 / 3.0, ly=2.0, origin=(-0.1, 0.7))
    rng = np.random.default_rng(6)
    fp = FieldPair(c=rng.uniform(0.0, 1.0, (4, 3)), u=rng.normal(size=(4, 3, 2)), grid=g)
    path = write_snapshot(fp, tmp_path / "field.snapshot")
    assert path.read_text().splitlines()[0].startswith("gammaphase-field v1 4 3 ")
    back = read_snapshot(path)
    assert back.grid == g
    assert np.array_equal(back.c, fp.c) and np.array_equal(back.u, fp.u)


def test_snapshot_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.txt"
    path.write_text("something else\n")
    with pytest.raises(ParameterError):
        read_snapshot(path)
