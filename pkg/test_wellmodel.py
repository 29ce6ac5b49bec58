"""
Tests for the regular-solution well model and the geodesic distance
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from core.errors import DomainError, ParameterError, QuadratureError
from core.wellmodel import (
    ChemParams,
    WellKind,
    adaptive_simpson,
    analyze_wells,
    eval_dfbar,
    eval_f,
    eval_fbar,
    geodesic_distance,
    geodesic_distance_gauss,
    mm_constant,
    well_curvature,
)

P = ChemParams(omega=3.0, kt=1.0)


def test_fbar_closed_forms():
    assert eval_fbar(P, 0.0) == 0.0
    assert eval_fbar(P, 1.0) == 0.0
    assert eval_fbar(P, 0.5) == pytest.approx(0.75 - math.log(2.0), abs=1e-15)


def test_fbar_rejects_out_of_range():
    for s in (-1e-10, 1.0 + 1e-10, float("nan")):
        with pytest.raises(DomainError):
            eval_fbar(P, s)
    with pytest.raises(DomainError):
        eval_dfbar(P, 0.0)


def test_fbar_accepts_arrays():
    s = np.linspace(0.0, 1.0, 11)
    out = eval_fbar(P, s)
    assert isinstance(out, np.ndarray) and out.shape == s.shape


def test_chem_params_validation():
    with pytest.raises(ParameterError):
        ChemParams(omega=3.0, kt=0.0)
    with pytest.raises(ParameterError):
        ChemParams(omega=float("inf"), kt=1.0)


@pytest.mark.parametrize("omega", [1.0, 2.0, 2.0 - 1e-6])
def test_single_well(omega):
    w = analyze_wells(ChemParams(omega=omega, kt=1.0))
    assert w.kind == WellKind.SINGLE
    assert w.mu0 is None and w.mu1 is None
    assert w.fmin == pytest.approx(eval_fbar(ChemParams(omega=omega, kt=1.0), 0.5))
    with pytest.raises(ParameterError):
        w.require_double()


def test_classification_flips_at_two_kt():
    assert analyze_wells(ChemParams(omega=2.0 + 1e-6, kt=1.0)).kind == WellKind.DOUBLE
    assert analyze_wells(ChemParams(omega=2.0 - 1e-6, kt=1.0)).kind == WellKind.SINGLE


def test_double_well_location():
    w = analyze_wells(P)
    assert w.kind == WellKind.DOUBLE
    assert 0.0 < w.mu0 < 0.5 < w.mu1 < 1.0
    assert abs(w.mu0 + w.mu1 - 1.0) <= 1e-10
    assert w.mu0 == pytest.approx(0.0707, abs=1e-3)
    assert eval_f(P, w, w.mu0) <= 1e-12
    assert eval_f(P, w, w.mu1) <= 1e-12
    assert w.delta == pytest.approx(w.mu1 - w.mu0)


def test_fmin_matches_brute_force_scan():
    w = analyze_wells(P)
    scan = eval_fbar(P, np.linspace(0.0, 1.0, 1_000_001))
    assert w.fmin <= float(np.min(scan)) + 1e-12


def test_shifted_well_nonnegative_and_zero_only_at_wells():
    w = analyze_wells(P)
    s = np.linspace(0.0, 1.0, 10_001)
    f = eval_f(P, w, s)
    assert np.all(f >= 0.0)
    zeros = s[f == 0.0]
    assert np.all(np.minimum(np.abs(zeros - w.mu0), np.abs(zeros - w.mu1)) <= 1e-8)
    assert eval_f(P, w, 0.5) > 0.0
    assert eval_f(P, w, 0.5) == pytest.approx(eval_fbar(P, 0.5) - w.fmin)


def test_reflection_symmetry():
    w = analyze_wells(P)
    s = np.linspace(0.0, 1.0, 1001)
    assert np.max(np.abs(eval_f(P, w, s) - eval_f(P, w, 1.0 - s))) <= 1e-12


def test_wells_are_super_quadratic():
    w = analyze_wells(P)
    kappa, radius = well_curvature(P, w)
    assert kappa > 0.0
    assert radius == 0.02


def test_geodesic_distance_symmetric_and_zero_on_diagonal():
    w = analyze_wells(P)
    assert geodesic_distance(P, w, w.mu0, w.mu1) == geodesic_distance(P, w, w.mu1, w.mu0)
    assert geodesic_distance(P, w, 0.3, 0.3) == 0.0


def test_two_quadratures_agree():
    w = analyze_wells(P)
    simpson = geodesic_distance(P, w, w.mu0, w.mu1)
    gauss = geodesic_distance_gauss(P, w, w.mu0, w.mu1)
    assert simpson > 0.0
    assert abs(simpson - gauss) <= 1e-8


def test_geodesic_triangle_inequality():
    w = analyze_wells(P)
    rng = np.random.default_rng(7)
    for s, t, r in rng.uniform(0.0, 1.0, size=(20, 3)):
        direct = geodesic_distance(P, w, s, r)
        via = geodesic_distance(P, w, s, t) + geodesic_distance(P, w, t, r)
        assert direct <= via + 1e-9


def test_mm_constant_definition_and_monotonicity():
    w = analyze_wells(P)
    assert mm_constant(P, w) == 2.0 * geodesic_distance(P, w, w.mu0, w.mu1)

    p4 = ChemParams(omega=4.0, kt=1.0)
    assert mm_constant(p4, analyze_wells(p4)) > mm_constant(P, w)


@pytest.mark.parametrize("omega", [28.0, 40.0])
def test_strong_double_well_below_1e12(omega):
    # f̄′(s) = 0 gives s = (1 − s)·exp(−ω + 2ωs), so μ0 ≈ exp(−ω) to ~1e-10
    p = ChemParams(omega=omega, kt=1.0)
    w = analyze_wells(p)
    assert w.kind == WellKind.DOUBLE
    assert 0.0 < w.mu0 < 1e-12
    assert w.mu0 == pytest.approx(math.exp(-omega), rel=1e-9)
    assert w.mu1 == 1.0 - w.mu0
    y = math.log(w.mu0)
    assert abs(omega * (1.0 - 2.0 * w.mu0) + y - math.log1p(-w.mu0)) <= 1e-9


def test_well_location_is_scale_free_in_kt():
    a = analyze_wells(ChemParams(omega=30.0, kt=1.0))
    b = analyze_wells(ChemParams(omega=60.0, kt=2.0))
    assert b.mu0 == pytest.approx(a.mu0, rel=1e-12)


def test_mm_constant_needs_double_well():
    p = ChemParams(omega=1.0, kt=1.0)
    with pytest.raises(ParameterError):
        mm_constant(p, analyze_wells(p))


def test_adaptive_simpson_depth_limit():
    assert adaptive_simpson(lambda x: x * x, 0.0, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-12)
    with pytest.raises(QuadratureError):
        adaptive_simpson(math.sqrt, 0.0, 1.0, abs_tol=1e-14, max_depth=3)
