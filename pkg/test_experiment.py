"""
Tests for the campaign harness

Desk-scale campaigns are marked slow; the rest run on coarse grids or with
the cell energy stubbed out.
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from core.construct import Laminate
from core.errors import CheckFailed, IncompatibleMisfit, ParameterError
from core.field import Grid, MaterialParams
from core.solver import SolveConfig
from core.tensor import Misfit, isotropic_stiffness, nearest_connection
from core.wellmodel import ChemParams, mm_constant
from services.experiment_service import (
    CellEstimate,
    CompactnessEntry,
    ExperimentService,
    cell_grid,
    offset_for_fraction,
)

CHEM = ChemParams(omega=3.0, kt=1.0)
E0 = Misfit(0.0, 1.0, 0.0)
EY = np.array([0.0, 1.0])
DIAGONAL = np.array([1.0, 1.0]) / math.sqrt(2.0)
UNIT = (-0.5, 0.5, -0.5, 0.5)


def make_params(epsilon=0.1, e0=E0):
    return MaterialParams.build(CHEM, isotropic_stiffness(1.0, 1.0), e0, epsilon)


# ----------------------------------------------------------------------------
# geometry helpers
# ----------------------------------------------------------------------------

def test_cell_grid_spacing():
    g = cell_grid(0.1)
    assert g.hx <= 0.1 / 8 and g.hy <= 0.1 / 8
    assert g.origin == (-0.5, -0.5) and g.lx == 1.0
    wide = cell_grid(0.1, width=2.0, height=0.5)
    assert wide.lx == 2.0 and wide.ly == 0.5 and wide.origin == (-1.0, -0.25)


@pytest.mark.parametrize("nu, frac, expected", [
    (EY, 0.5, 0.0),
    (EY, 0.25, 0.25),
    (EY, 0.75, -0.25),
    (DIAGONAL, 0.5, 0.0),
])
def test_offset_for_fraction(nu, frac, expected):
    assert offset_for_fraction(nu, UNIT, frac) == pytest.approx(expected, abs=1e-12)


def test_offset_for_fraction_on_a_diagonal_corner():
    # the corner triangle above x + y = √2·t has area (1/√2 − t)²
    t = offset_for_fraction(DIAGONAL, UNIT, 0.125)
    assert (1.0 / math.sqrt(2.0) - t) ** 2 == pytest.approx(0.125, abs=1e-12)


def test_cell_estimate_needs_decreasing_eps():
    with pytest.raises(ParameterError):
        CellEstimate(nu=EY, eps_list=(0.1, 0.2), energies=(1.0, 1.0), valid=(True, True),
                     k_hat=1.0, slope=0.0, fit_residual=0.0)


# ----------------------------------------------------------------------------
# fan-out and fits with stubbed cells
# ----------------------------------------------------------------------------

def test_fan_out_keeps_task_order():
    service = ExperimentService(threads=4)
    tasks = {f"task-{k}": (lambda k=k: k * k) for k in range(10)}
    results = service._fan_out(tasks)
    assert list(results) == list(tasks)
    assert [results[f"task-{k}"] for k in range(10)] == [k * k for k in range(10)]


def test_cell_fit_recovers_the_model(monkeypatch):
    service = ExperimentService(threads=2)
    monkeypatch.setattr(service, "_cell_energy", lambda conn, params, eps, width, height: 0.8 + 0.3 * math.sqrt(eps))
    est = service.cell_problem(EY, make_params(), [0.2, 0.1, 0.05])
    assert est.k_hat == pytest.approx(0.8, abs=1e-10)
    assert est.slope == pytest.approx(0.3, abs=1e-10)
    assert est.fit_residual <= 1e-10
    assert all(est.valid)
    assert np.allclose(est.nu, EY)
    assert est.residual_jump <= 1e-12


def test_cell_fit_skips_failed_runs(monkeypatch):
    service = ExperimentService()
    energies = {0.2: 1.0, 0.1: math.nan, 0.05: 0.9}
    monkeypatch.setattr(service, "_cell_energy", lambda conn, params, eps, width, height: energies[eps])
    est = service.cell_problem(EY, make_params(), [0.2, 0.1, 0.05])
    assert est.valid == (True, False, True)
    assert math.isnan(est.k_hat)


def test_cell_width_is_passed_to_every_run(monkeypatch):
    service = ExperimentService()
    monkeypatch.setattr(service, "_cell_energy", lambda conn, params, eps, width, height: width * (0.8 + eps))
    narrow = service.cell_problem(EY, make_params(), [0.2, 0.1, 0.05])
    wide = service.cell_problem(EY, make_params(), [0.2, 0.1, 0.05], width=2.0)
    assert wide.k_hat == pytest.approx(2.0 * narrow.k_hat, rel=1e-12)


def test_cell_problem_rejects_unsorted_eps():
    with pytest.raises(ParameterError):
        ExperimentService().cell_problem(EY, make_params(), [0.05, 0.1])


def test_anisotropy_flags(monkeypatch):
    service = ExperimentService()
    monkeypatch.setattr(service, "_cell_energy", lambda conn, params, eps, width, height: 1.0 / eps)
    report = service.anisotropy_probe(DIAGONAL, make_params(), [0.2, 0.1, 0.05])
    assert not report.compatible
    assert report.strictly_increasing
    assert report.delta_min == pytest.approx(1.0)

    flat = service.anisotropy_probe(EY, make_params(), [0.2, 0.1])
    assert flat.compatible


def test_anisotropy_with_a_single_normal(monkeypatch):
    service = ExperimentService()
    monkeypatch.setattr(service, "_cell_energy", lambda conn, params, eps, width, height: 1.0 / eps)
    params = make_params(e0=Misfit(1.0, 0.0, 0.0))
    assert service.anisotropy_probe(np.array([1.0, 0.0]), params, [0.2, 0.1]).compatible
    assert not service.anisotropy_probe(EY, params, [0.2, 0.1]).compatible


def test_incompatible_normal_without_growth_raises(monkeypatch):
    service = ExperimentService()
    monkeypatch.setattr(service, "_cell_energy", lambda conn, params, eps, width, height: 1.0)
    with pytest.raises(CheckFailed) as info:
        service.anisotropy_probe(DIAGONAL, make_params(), [0.2, 0.1, 0.05])
    report = info.value.report
    assert report.energies == (1.0, 1.0, 1.0)
    assert not report.strictly_increasing
    assert report.delta_min == 0.0

    lenient = service.anisotropy_probe(DIAGONAL, make_params(), [0.2, 0.1, 0.05], strict=False)
    assert not lenient.compatible and not lenient.strictly_increasing
    with pytest.raises(CheckFailed):
        lenient.check()


def test_compatible_normal_without_growth_passes(monkeypatch):
    service = ExperimentService()
    monkeypatch.setattr(service, "_cell_energy", lambda conn, params, eps, width, height: 1.0)
    report = service.anisotropy_probe(EY, make_params(), [0.2, 0.1, 0.05])
    assert report.compatible and not report.strictly_increasing
    report.check()


def _stub_compactness(monkeypatch, service, mismatch, fraction):
    def task(params, eps, seed, mass, width, height):
        return CompactnessEntry(epsilon=eps, energy=1.0, mismatch_sq=mismatch[eps], well_fraction=fraction,
                                interface_length=1.0, iterations=1, converged=True)
    monkeypatch.setattr(service, "_compactness_task", task)


@pytest.mark.parametrize("mismatch, fraction, message", [
    ({0.2: 2.0, 0.1: 4.0}, 0.95, "mismatch^2 did not decrease"),
    ({0.2: 4.0, 0.1: 2.0}, 0.8, "well fraction 0.800"),
    ({0.2: 2.0, 0.1: 4.0}, 0.8, "; well fraction"),
])
def test_compactness_failures_raise(monkeypatch, mismatch, fraction, message):
    service = ExperimentService()
    _stub_compactness(monkeypatch, service, mismatch, fraction)
    with pytest.raises(CheckFailed) as info:
        service.compactness_probe(make_params(), (0.2, 0.1), seed=1)
    assert message in str(info.value)
    assert info.value.report.well_fraction_min == 0.9

    report = service.compactness_probe(make_params(), (0.2, 0.1), seed=1, strict=False)
    assert report.mismatch_ratio == mismatch[0.1] / mismatch[0.2]


def test_compactness_passes_when_both_hold(monkeypatch):
    service = ExperimentService()
    _stub_compactness(monkeypatch, service, {0.2: 4.0, 0.1: 2.0}, 0.95)
    report = service.compactness_probe(make_params(), (0.2, 0.1), seed=1)
    assert report.mismatch_decreasing and report.well_fraction_ok
    assert report.mismatch_ratio == 0.5


# ----------------------------------------------------------------------------
# mass sweep
# ----------------------------------------------------------------------------

def _coarse_grid(n=17):
    return Grid(nx=n, ny=n, lx=1.0, ly=1.0, origin=(-0.5, -0.5))


def test_mass_sweep_ground_state_entry():
    params = make_params()
    w = params.wells
    lam = Laminate(normal=EY, offsets=(0.0,), phase0=0, domain=UNIT)
    service = ExperimentService(solve=SolveConfig(max_outer=20))
    (entry,) = service.mass_sweep(lam, params, 0.1, [w.mu0], grid=_coarse_grid())
    assert entry.error is None
    assert entry.mean_error <= 1e-12
    assert abs(entry.energy) <= 1e-10
    assert entry.sharp_prediction == 0.0
    assert entry.shift == 0.0


def test_mass_sweep_records_unreachable_means():
    params = make_params()
    service = ExperimentService(solve=SolveConfig(max_outer=5))
    (entry,) = service.mass_sweep(None, params, 0.1, [0.99], grid=_coarse_grid())
    assert entry.error.startswith("RangeError")
    assert math.isnan(entry.energy)


def test_mass_sweep_places_the_interface_by_volume_fraction():
    params = make_params()
    w = params.wells
    m = 0.5 * (w.mu0 + w.mu1)
    lam = Laminate(normal=EY, offsets=(0.0,), phase0=0, domain=UNIT)
    grid = _coarse_grid(33)
    service = ExperimentService(solve=SolveConfig(max_outer=100))
    (entry,) = service.mass_sweep(lam, params, 0.1, [m], grid=grid)
    assert entry.error is None
    assert entry.offset == pytest.approx(0.0, abs=1e-12)
    assert entry.max_iterate_error <= 1e-12
    assert abs(entry.measured_offset) <= 2.0 * grid.hy
    assert entry.sharp_prediction == pytest.approx(mm_constant(CHEM, w))


def test_mass_sweep_rejects_an_incompatible_laminate():
    params = make_params()
    lam = Laminate(normal=DIAGONAL, offsets=(0.0,), phase0=0, domain=UNIT)
    service = ExperimentService(solve=SolveConfig(max_outer=5))
    with pytest.raises(IncompatibleMisfit):
        service.mass_sweep(lam, params, 0.1, [0.5], grid=_coarse_grid())


# ----------------------------------------------------------------------------
# desk-scale campaigns
# ----------------------------------------------------------------------------
# cell energies carry an O(ε) excess from the corners where the pinned sharp
# phase meets the diffuse one, so the √ε fit is biased low at desk ε

EPS_SWEEP = [0.2, 0.1, 0.05]


@pytest.mark.slow
def test_cell_problem_approaches_surface_tension():
    params = make_params()
    service = ExperimentService(threads=3, solve=SolveConfig(max_outer=50))
    est = service.cell_problem(EY, params, EPS_SWEEP)
    mm = mm_constant(CHEM, params.wells)
    assert all(est.valid)
    assert est.energies[-1] < est.energies[0]
    assert all(e >= 0.9 * mm for e in est.energies)
    assert est.slope > 0.0
    assert est.k_hat < est.energies[-1]
    assert abs(est.k_hat - mm) <= 0.5 * mm


@pytest.mark.slow
def test_cell_energy_does_not_depend_on_the_height():
    params = make_params()
    service = ExperimentService(threads=2, solve=SolveConfig(max_outer=20))
    report = service.height_independence_check(EY, params, 0.05, heights=(1.0, 0.5))
    assert 0.95 <= report.ratio <= 1.05
    assert 0.0 <= report.far_band_fraction <= 0.05


@pytest.mark.slow
def test_cell_energy_grows_with_the_width():
    params = make_params()
    service = ExperimentService(solve=SolveConfig(max_outer=20))
    conn = nearest_connection(params.misfit, params.wells, EY)
    mm = mm_constant(CHEM, params.wells)
    narrow = service._cell_energy(conn, params, 0.1, width=1.0)
    wide = service._cell_energy(conn, params, 0.1, width=2.0)
    assert narrow < wide <= 1.03 * 2.0 * narrow
    # the corners cancel in the difference, leaving one unit of interface
    assert 0.9 * mm <= wide - narrow <= 1.3 * mm


@pytest.mark.slow
def test_incompatible_normal_energies_diverge():
    params = make_params()
    service = ExperimentService(threads=3, solve=SolveConfig(max_outer=50))
    report = service.anisotropy_probe(DIAGONAL, params, EPS_SWEEP)
    assert not report.compatible
    assert report.strictly_increasing
    assert report.delta_min > 0.0

    control = service.anisotropy_probe(EY, params, EPS_SWEEP)
    assert control.compatible
    assert control.energies[-1] < control.energies[0]


@pytest.mark.slow
def test_compactness_from_random_data():
    params = make_params()
    service = ExperimentService(threads=2, solve=SolveConfig(max_outer=60))
    report = service.compactness_probe(params, (0.2, 0.1), seed=3, mass=0.5, strict=False)
    big, small = report.entries
    assert [big.epsilon, small.epsilon] == [0.2, 0.1]
    for entry in report.entries:
        assert entry.mismatch_sq >= 0.0
        assert entry.final is not None
    assert report.mismatch_decreasing == (small.mismatch_sq <= big.mismatch_sq)
    assert report.well_fraction_ok == (small.well_fraction >= 0.9)
    # one unit interface already keeps about a third of the nodes off the wells at ε = 0.1
    assert not report.well_fraction_ok
    with pytest.raises(CheckFailed):
        report.check()


@pytest.mark.slow
def test_mass_sweep_matches_the_sharp_energy():
    params = make_params()
    w = params.wells
    lam = Laminate(normal=EY, offsets=(0.0,), phase0=0, domain=UNIT)
    service = ExperimentService(solve=SolveConfig(max_outer=100))
    (entry,) = service.mass_sweep(lam, params, 0.05, [0.5 * (w.mu0 + w.mu1)])
    assert entry.error is None
    assert entry.mean_error <= 1e-12
    assert abs(entry.energy - entry.sharp_prediction) <= 0.1 * entry.sharp_prediction


@pytest.mark.slow
def test_small_mass_perturbation_costs_less_as_eps_shrinks():
    params = make_params()
    w = params.wells
    service = ExperimentService(solve=SolveConfig(max_outer=10))
    energies = []
    for eps in EPS_SWEEP:
        (entry,) = service.mass_sweep(None, params, eps, [w.mu0 + 0.5 * w.delta * eps ** 2])
        assert entry.error is None
        assert entry.eta == pytest.approx(eps / math.sqrt(2.0 * math.pi), rel=1e-9)
        energies.append(entry.energy)
    assert energies[0] > energies[1] > energies[2] > 0.0
