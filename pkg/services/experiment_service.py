"""
Experiment Service - Campaigns that test the sharp-interface limit

Every campaign is a set of independent tasks (one per ε, height or target
mean). Tasks run on a thread pool; results are keyed by task id and put back
in task order, so the output never depends on scheduling.

Campaigns:
- cell_problem: interfacial energy K(ν) from a Dirichlet cell problem and the
  fit E(ε) = K + c1·√ε
- height_independence_check: the same cell at two heights
- anisotropy_probe: cell energies along a normal; growth means no finite limit
- mass_sweep: mass-constrained minimization from tuned recovery fields
- compactness_probe: random initial data at two ε with h/ε fixed
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from config.settings import settings
from config.solver_config import get_config
from core.construct import (
    Laminate,
    WellMode,
    ball_recovery,
    build_profile,
    mass_tuned_recovery,
    profile_center_shift,
    recovery_pair,
    reference_pair,
    sharp_energy,
)
from core.errors import CheckFailed, GeometryError, NonConvergence, ParameterError, RangeError
from core.field import (
    FieldPair,
    Grid,
    MaterialParams,
    elastic_mismatch,
    energy,
    field_mean,
    interface_length,
    well_fraction,
)
from core.solver import Dirichlet, SolveConfig, SolveReport, minimize, random_init
from core.tensor import RankOneConnection, compatibility, is_admissible, nearest_connection, skew_normalize
from core.wellmodel import mm_constant

logger = logging.getLogger(__name__)


# ============================================================================
# RESULT TYPES
# ============================================================================

@dataclass(frozen=True)
class CellEstimate:
    """Cell energies along an ε sweep and the extrapolated K(ν)"""
    nu: np.ndarray
    eps_list: Tuple[float, ...]
    energies: Tuple[float, ...]
    valid: Tuple[bool, ...]
    k_hat: float
    slope: float
    fit_residual: float
    residual_jump: float = 0.0

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ParameterError("eps_list must be strictly decreasing")


@dataclass
class HeightReport:
    heights: Tuple[float, float]
    energies: Tuple[float, float]
    ratio: float
    far_band_energy: float
    far_band_fraction: float


@dataclass
class AnisotropyReport:
    nu: np.ndarray
    compatible: bool
    eps_list: Tuple[float, ...]
    energies: Tuple[float, ...]
    strictly_increasing: bool
    delta_min: float

    def check(self) -> None:
        """
        Raises:
            CheckFailed: incompatible normal whose energies do not grow strictly
        """
        if not self.compatible and not self.strictly_increasing:
            raise CheckFailed(f"incompatible normal {np.round(self.nu, 6).tolist()}: energies do not grow "
                              f"strictly over eps={list(self.eps_list)} (delta_min={self.delta_min:.3e})",
                              report=self)


@dataclass
class MassEntry:
    m: float
    mean: float = math.nan
    mean_error: float = math.nan
    energy: float = math.nan
    sharp_prediction: float = math.nan
    offset: float = math.nan
    measured_offset: float = math.nan
    shift: float = math.nan
    eta: float = math.nan
    iterations: int = 0
    converged: bool = False
    max_iterate_error: float = math.nan
    error: Optional[str] = None


@dataclass
class CompactnessEntry:
    epsilon: float
    energy: float
    mismatch_sq: float
    well_fraction: float
    interface_length: float
    iterations: int
    converged: bool
    final: Optional[FieldPair] = field(default=None, repr=False)


@dataclass
class CompactnessReport:
    entries: List[CompactnessEntry]
    mismatch_ratio: float
    mismatch_decreasing: bool
    well_fraction_ok: bool
    well_fraction_min: float = 0.9

    def check(self) -> None:
        """
        Raises:
            CheckFailed: mismatch² grew from the larger ε to the smaller one, or
                the smaller ε left too many nodes away from the wells
        """
        failures = []
        if not self.mismatch_decreasing:
            failures.append(f"mismatch^2 did not decrease (ratio {self.mismatch_ratio:.3e})")
        if not self.well_fraction_ok:
            small = min(self.entries, key=lambda e: e.epsilon)
            failures.append(f"well fraction {small.well_fraction:.3f} at eps={small.epsilon} "
                            f"below {self.well_fraction_min}")
        if failures:
            raise CheckFailed("compactness: " + "; ".join(failures), report=self)


# ============================================================================
# GEOMETRY HELPERS
# ============================================================================

def cell_grid(epsilon: float, width: float = 1.0, height: float = 1.0) -> Grid:
    """Box (−w/2, w/2)×(−l/2, l/2) with h = ε / cells_per_eps"""
    h = epsilon / get_config("experiment")["cells_per_eps"]
    return Grid.box(-0.5 * width, 0.5 * width, -0.5 * height, 0.5 * height, h)


def _grid_domain(grid: Grid) -> Tuple[float, float, float, float]:
    x0, y0 = grid.origin
    return (x0, x0 + grid.lx, y0, y0 + grid.ly)


def _clip_polygon(poly: List[np.ndarray], nu: np.ndarray, t: float) -> List[np.ndarray]:
    """Part of a convex polygon with z·ν ≥ t"""
    out = []
    for k, p in enumerate(poly):
        q = poly[(k + 1) % len(poly)]
        fp, fq = p @ nu - t, q @ nu - t
        if fp >= 0.0:
            out.append(p)
        if fp * fq < 0.0:
            out.append(p + (q - p) * (fp / (fp - fq)))
    return out


def _polygon_area(poly: List[np.ndarray]) -> float:
    if len(poly) < 3:
        return 0.0
    xs = np.array([p[0] for p in poly])
    ys = np.array([p[1] for p in poly])
    return 0.5 * abs(float(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))))


def offset_for_fraction(nu: np.ndarray, domain: Tuple[float, float, float, float], frac: float) -> float:
    """Offset t with area{z·ν > t} = frac·area, by bisection"""
    x0, x1, y0, y1 = domain
    rect = [np.array(p, dtype=float) for p in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]
    total = (x1 - x0) * (y1 - y0)
    proj = [float(p @ nu) for p in rect]
    lo, hi = min(proj), max(proj)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _polygon_area(_clip_polygon(rect, nu, mid)) > frac * total:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15:
            break
    return 0.5 * (lo + hi)


# ============================================================================
# SERVICE
# ============================================================================

class ExperimentService:
    """Runs campaigns; `threads` bounds the worker pool"""

    def __init__(self, threads: Optional[int] = None, solve: Optional[SolveConfig] = None):
        self.threads = max(1, threads or settings.GAMMAPHASE_THREADS)
        self.solve = solve or SolveConfig()

    # ------------------------------------------------------------------
    # fan-out
    # ------------------------------------------------------------------

    def _fan_out(self, tasks: Dict[str, Callable[[], object]]) -> Dict[str, object]:
        if self.threads == 1 or len(tasks) == 1:
            return {key: task() for key, task in tasks.items()}
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = {key: pool.submit(task) for key, task in tasks.items()}
            return {key: futures[key].result() for key in tasks}

    # ------------------------------------------------------------------
    # cell problem
    # ------------------------------------------------------------------

    def _cell_run(self, conn: RankOneConnection, params: MaterialParams, epsilon: float,
                  width: float = 1.0, height: float = 1.0) -> Tuple[SolveReport, Grid]:
        """Minimize on the cell with both u and c pinned to the sharp state on all four sides"""
        p = params.with_epsilon(epsilon)
        w, e0 = p.wells, p.misfit
        grid = cell_grid(epsilon, width, height)
        lam = Laminate(normal=conn.nu, offsets=(0.0,), phase0=0, domain=_grid_domain(grid))
        spec = build_profile(w, p.chem, epsilon, WellMode.CHEM_ONLY)
        init = recovery_pair(lam, conn, spec, grid, w, e0, shift=profile_center_shift(spec))

        u_ref, c_ref = reference_pair(conn, w, grid.points(), e0)
        pins = Dirichlet(mask=grid.boundary_mask(), u=u_ref, c=c_ref)
        report = minimize(init, p, self.solve, dirichlet=pins)
        logger.info(f"cell: nu={np.round(conn.nu, 6)}, eps={epsilon}, {grid.nx}x{grid.ny}, "
                    f"E={report.breakdown.total:.10e}")
        return report, grid

    def _cell_energy(self, conn: RankOneConnection, params: MaterialParams, epsilon: float,
                     width: float = 1.0, height: float = 1.0) -> float:
        try:
            report, _ = self._cell_run(conn, params, epsilon, width, height)
        except NonConvergence as e:
            logger.warning(f"cell at eps={epsilon} did not converge: {e}")
            return math.nan
        return report.breakdown.total

    def _sweep(self, nu: np.ndarray, params: MaterialParams, eps_list: Sequence[float],
               width: float = 1.0, height: float = 1.0) -> Tuple[RankOneConnection, List[float]]:
        conn = nearest_connection(params.misfit, params.wells, nu)
        tasks = {f"eps={eps!r}": (lambda eps=eps: self._cell_energy(conn, params, eps, width, height))
                 for eps in eps_list}
        results = self._fan_out(tasks)
        return conn, [results[f"eps={eps!r}"] for eps in eps_list]

    def cell_problem(self, nu: np.ndarray, params: MaterialParams, eps_list: Sequence[float],
                     width: float = 1.0, height: float = 1.0) -> CellEstimate:
        """
        Estimate K(ν) from Dirichlet cell problems on (−w/2, w/2)×(−l/2, l/2)

        Runs that fail to converge are marked invalid and left out of the fit;
        the fit needs at least min_fit_points valid energies.
        """
        eps_list = tuple(float(e) for e in eps_list)
        if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
            raise ParameterError("eps_list must be strictly decreasing")
        conn, energies = self._sweep(nu, params, eps_list, width, height)
        valid = tuple(bool(np.isfinite(e)) for e in energies)

        k_hat = slope = residual = math.nan
        x = np.sqrt(np.array([e for e, ok in zip(eps_list, valid) if ok]))
        y = np.array([e for e, ok in zip(energies, valid) if ok])
        if y.size >= get_config("experiment")["min_fit_points"]:
            design = np.column_stack([np.ones_like(x), x])
            (k_hat, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
            residual = float(np.sqrt(np.mean((design @ np.array([k_hat, slope]) - y) ** 2)))
        else:
            logger.warning(f"cell_problem: only {y.size} valid energies, no fit")

        return CellEstimate(nu=conn.nu, eps_list=eps_list, energies=tuple(energies), valid=valid,
                            k_hat=float(k_hat), slope=float(slope), fit_residual=residual,
                            residual_jump=conn.residual)

    # ------------------------------------------------------------------
    # height independence
    # ------------------------------------------------------------------

    def height_independence_check(self, nu: np.ndarray, params: MaterialParams, epsilon: float,
                                  heights: Tuple[float, float] = (1.0, 0.5), width: float = 1.0,
                                  band: Optional[float] = None) -> HeightReport:
        """
        Cell energies at two heights and the energy far from the interface

        The far band is {|z·ν| > band} (default a quarter of the first
        height) in the first run.
        """
        conn = nearest_connection(params.misfit, params.wells, nu)
        tasks = {f"height={l!r}#{k}": (lambda l=l: self._cell_run(conn, params, epsilon, width, l))
                 for k, l in enumerate(heights)}
        results = self._fan_out(tasks)
        (first, grid), (second, _) = [results[f"height={l!r}#{k}"] for k, l in enumerate(heights)]

        band = 0.25 * heights[0] if band is None else band
        xc, yc = grid.cell_centers()
        mask = np.abs(xc * conn.nu[0] + yc * conn.nu[1]) > band
        far = energy(first.final, params.with_epsilon(epsilon), mask=mask).total
        e1, e2 = first.breakdown.total, second.breakdown.total
        return HeightReport(heights=tuple(heights), energies=(e1, e2), ratio=e2 / e1 if e1 else math.nan,
                            far_band_energy=far, far_band_fraction=far / e1 if e1 else math.nan)

    # ------------------------------------------------------------------
    # anisotropy
    # ------------------------------------------------------------------

    def anisotropy_probe(self, nu: np.ndarray, params: MaterialParams, eps_list: Sequence[float],
                         strict: bool = True) -> AnisotropyReport:
        """
        Cell energies along ν with the cell-problem harness

        delta_min is the smallest relative growth E(ε_{k+1})/E(ε_k) − 1; the
        energies diverge (no finite limit) when it is positive over the sweep.

        Raises:
            CheckFailed: with strict, when ν is incompatible and the energies
                do not grow strictly (the report rides on the error)
        """
        eps_list = tuple(float(e) for e in eps_list)
        if params.misfit.det <= get_config("tensor")["det_tol"]:
            compatible = is_admissible(nu, compatibility(params.misfit, params.wells))
        else:
            compatible = False
        conn, energies = self._sweep(nu, params, eps_list)
        growth = [b / a - 1.0 for a, b in zip(energies, energies[1:])]
        delta_min = float(min(growth)) if growth else math.nan
        increasing = bool(growth) and all(g > 0.0 for g in growth)
        report = AnisotropyReport(nu=conn.nu, compatible=compatible, eps_list=eps_list,
                                  energies=tuple(energies), strictly_increasing=increasing, delta_min=delta_min)
        if not compatible and not increasing:
            logger.warning(f"anisotropy_probe: incompatible normal {conn.nu} without strict growth")
            if strict:
                report.check()
        return report

    # ------------------------------------------------------------------
    # mass constraint
    # ------------------------------------------------------------------

    def _mass_task(self, lam: Optional[Laminate], params: MaterialParams, grid: Grid, m: float) -> MassEntry:
        w, e0 = params.wells, params.misfit
        entry = MassEntry(m=m)
        try:
            if lam is None:
                init, eta = ball_recovery(grid, params, m)
                entry.eta = eta
                entry.sharp_prediction = 0.0
            else:
                conn = nearest_connection(e0, w, lam.normal)
                # volume fraction of the μ1 phase
                frac = min(max((m - w.mu0) / w.delta, 0.0), 1.0)
                if frac <= 0.0 or frac >= 1.0:
                    tuned = Laminate(normal=lam.normal, offsets=(), phase0=int(frac >= 1.0), domain=lam.domain)
                else:
                    upper = frac if lam.phase0 == 0 else 1.0 - frac
                    entry.offset = offset_for_fraction(lam.normal, lam.domain, upper)
                    tuned = Laminate(normal=lam.normal, offsets=(entry.offset,), phase0=lam.phase0,
                                     domain=lam.domain)
                spec = build_profile(w, params.chem, params.epsilon, WellMode.CHEM_ONLY)
                init, entry.shift = mass_tuned_recovery(tuned, conn, spec, grid, w, e0, m)
                entry.sharp_prediction = sharp_energy(tuned, mm_constant(params.chem, w))

            report = minimize(init, params, self.solve.model_copy(update={"mass": m}))
        except (RangeError, GeometryError) as e:
            logger.warning(f"mass_sweep: m={m}: {e}")
            entry.error = f"{type(e).__name__}: {e}"
            return entry

        final = report.final
        entry.mean = field_mean(final.c, grid)
        entry.mean_error = abs(entry.mean - m)
        entry.max_iterate_error = float(max(abs(v - m) for v in report.mean_trace))
        entry.energy = report.breakdown.total
        entry.iterations, entry.converged = report.iterations, report.converged
        if lam is not None and lam.offsets:
            chi = (final.c > 0.5 * (w.mu0 + w.mu1)).astype(float)
            upper = field_mean(chi, grid) if lam.phase0 == 0 else 1.0 - field_mean(chi, grid)
            entry.measured_offset = offset_for_fraction(lam.normal, lam.domain, upper)
        return entry

    def mass_sweep(self, lam: Optional[Laminate], params: MaterialParams, epsilon: float,
                   m_list: Sequence[float], grid: Optional[Grid] = None) -> List[MassEntry]:
        """
        Mass-constrained minimization for each target mean

        With a laminate, the single interface is placed by volume fraction and
        the recovery field is tuned to the mean; without one, a μ1 droplet in
        the μ0 background is used. RangeError and GeometryError are recorded
        per entry.

        Raises:
            IncompatibleMisfit: the laminate normal is not rank-one compatible
        """
        p = params.with_epsilon(epsilon)
        if lam is not None:
            lam.validate(compatibility(p.misfit, p.wells))
        if grid is None:
            grid = cell_grid(epsilon) if lam is None else Grid.box(*lam.domain, epsilon / get_config("experiment")["cells_per_eps"])
        if lam is not None:
            lam = Laminate(normal=lam.normal, offsets=lam.offsets, phase0=lam.phase0, domain=_grid_domain(grid))
        tasks = {f"m={m!r}#{k}": (lambda m=m: self._mass_task(lam, p, grid, float(m))) for k, m in enumerate(m_list)}
        results = self._fan_out(tasks)
        return [results[f"m={m!r}#{k}"] for k, m in enumerate(m_list)]

    # ------------------------------------------------------------------
    # compactness
    # ------------------------------------------------------------------

    def _compactness_task(self, params: MaterialParams, epsilon: float, seed: int,
                          mass: Optional[float], width: float, height: float) -> CompactnessEntry:
        p = params.with_epsilon(epsilon)
        grid = cell_grid(epsilon, width, height)
        init = random_init(grid, p, seed)
        report = minimize(init, p, self.solve.model_copy(update={"mass": mass}))
        final = report.final
        final.u = skew_normalize(final.u, grid)
        band = get_config("experiment")["well_band"]
        return CompactnessEntry(epsilon=epsilon, energy=report.breakdown.total,
                                mismatch_sq=elastic_mismatch(final, p.misfit, p.wells) ** 2,
                                well_fraction=well_fraction(final.c, p.wells, band),
                                interface_length=interface_length(final.c, grid, p.wells),
                                iterations=report.iterations, converged=report.converged, final=final)

    def compactness_probe(self, params: MaterialParams, eps_pair: Tuple[float, float], seed: int = None,
                          mass: Optional[float] = None, width: float = 1.0, height: float = 1.0,
                          strict: bool = True) -> CompactnessReport:
        """
        Random-init minimizers at two ε (h/ε fixed)

        Reports elastic_mismatch², the fraction of nodes near a well and the
        interface length.

        Raises:
            CheckFailed: with strict, when mismatch² does not decrease with ε
                or the smaller ε has fewer than well_fraction_min of its nodes
                within well_band of a well
        """
        seed = self.solve.seed if seed is None else seed
        eps_pair = tuple(float(e) for e in eps_pair)
        tasks = {f"eps={eps!r}#{k}": (lambda eps=eps: self._compactness_task(params, eps, seed, mass, width, height))
                 for k, eps in enumerate(eps_pair)}
        results = self._fan_out(tasks)
        entries = [results[f"eps={eps!r}#{k}"] for k, eps in enumerate(eps_pair)]

        big, small = sorted(entries, key=lambda e: -e.epsilon)
        ratio = small.mismatch_sq / big.mismatch_sq if big.mismatch_sq > 0.0 else math.nan
        threshold = get_config("experiment")["well_fraction_min"]
        report = CompactnessReport(entries=entries, mismatch_ratio=ratio,
                                   mismatch_decreasing=bool(small.mismatch_sq <= big.mismatch_sq),
                                   well_fraction_ok=bool(small.well_fraction >= threshold),
                                   well_fraction_min=threshold)
        if strict:
            report.check()
        return report


__all__ = [
    'ExperimentService',
    'CellEstimate',
    'HeightReport',
    'AnisotropyReport',
    'MassEntry',
    'CompactnessEntry',
    'CompactnessReport',
    'cell_grid',
    'offset_for_fraction',
]
