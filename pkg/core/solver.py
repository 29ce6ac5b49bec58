"""
Solver - Alternating Minimization of the Discrete Energy

The displacement subproblem is a convex quadratic and is solved exactly by
conjugate gradients; the phase takes one projected-gradient step with
backtracking per outer iteration.

Two boundary modes:
- gauge (default): no boundary conditions; rigid motions are projected out of
  every CG iterate and the result is skew-normalized
- Dirichlet: u (and optionally c) are pinned on a node mask; no gauge fixing

Usage:
    params = MaterialParams.build(chem, stiffness, misfit, epsilon=0.05)
    init = random_init(grid, params, seed=42)
    report = minimize(init, params, SolveConfig(mass=0.5))
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config.solver_config import get_config
from core.errors import NonConvergence, ParameterError, RangeError, StepFailure
from core.field import (
    EnergyBreakdown,
    FieldPair,
    Grid,
    MaterialParams,
    elastic_operator,
    elastic_rhs,
    energy,
    field_mean,
    lumped_mass,
    phase_gradient,
)
from core.tensor import skew_normalize

logger = logging.getLogger(__name__)

_DEFAULTS = get_config("solver")


# ============================================================================
# TYPES
# ============================================================================

class SolveConfig(BaseModel):
    """Knobs of one minimization run"""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    max_outer: int = Field(_DEFAULTS["max_outer"], ge=1, description="Outer iteration cap")
    tol_rel: float = Field(_DEFAULTS["tol_rel"], gt=0.0, description="Relative energy-decrease threshold")
    cg_tol: float = Field(_DEFAULTS["cg_tol"], gt=0.0, description="Relative CG residual tolerance")
    cg_max: int = Field(_DEFAULTS["cg_max"], ge=1, description="CG iteration cap")
    step0: Optional[float] = Field(None, gt=0.0, description="Initial phase step; default step_scale*h^2/eps")
    mass: Optional[float] = Field(None, ge=0.0, le=1.0, description="Target mean of c")
    seed: int = Field(_DEFAULTS["seed"], ge=0, description="RNG seed for random initialization")


@dataclass
class Dirichlet:
    """Pinned nodes with their displacement and (optionally) phase values"""
    mask: np.ndarray
    u: np.ndarray
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != self.mask.shape + (2,):
            raise ParameterError(f"Dirichlet u shape {self.u.shape} does not match mask {self.mask.shape}")
        if self.c is not None:
            self.c = np.asarray(self.c, dtype=float)

    @classmethod
    def from_fields(cls, fp: FieldPair, mask: Optional[np.ndarray] = None, pin_phase: bool = True) -> "Dirichlet":
        """Pin the values of fp on mask (all four sides by default)"""
        mask = fp.grid.boundary_mask() if mask is None else mask
        return cls(mask=mask, u=fp.u.copy(), c=fp.c.copy() if pin_phase else None)

    @property
    def pins_phase(self) -> bool:
        return self.c is not None

    def apply(self, fp: FieldPair) -> None:
        fp.u[self.mask] = self.u[self.mask]
        if self.pins_phase:
            fp.c[self.mask] = self.c[self.mask]


@dataclass
class SolveReport:
    energy_trace: List[float]
    iterations: int
    converged: bool
    final: FieldPair
    breakdown: Optional[EnergyBreakdown] = None
    mean_trace: List[float] = field(default_factory=list)


# ============================================================================
# ELASTIC SUBPROBLEM
# ============================================================================

@lru_cache(maxsize=32)
def _rigid_basis(grid: Grid) -> np.ndarray:
    """Orthonormal basis of {u : e(u) = 0} in the nodal inner product, (3, nx, ny, 2)"""
    x, y = grid.coordinates()
    x = x - x.mean()
    y = y - y.mean()
    basis = np.zeros((3, grid.nx, grid.ny, 2))
    basis[0, ..., 0] = 1.0
    basis[1, ..., 1] = 1.0
    basis[2, ..., 0] = -y
    basis[2, ..., 1] = x
    for k in range(3):
        basis[k] /= np.linalg.norm(basis[k])
    return basis


def _project_rigid(v: np.ndarray, basis: np.ndarray) -> np.ndarray:
    coeffs = np.tensordot(basis, v, axes=([1, 2, 3], [0, 1, 2]))
    return v - np.tensordot(coeffs, basis, axes=1)


def elastic_solve(c: np.ndarray, params: MaterialParams, grid: Grid, cg_tol: float = None,
                  cg_max: int = None, u0: Optional[np.ndarray] = None,
                  dirichlet: Optional[Dirichlet] = None) -> np.ndarray:
    """
    Displacement minimizing Σ ℂ(e(u) − c e0):(e(u) − c e0) for fixed c

    Args:
        c: nodal phase
        params: material bundle (only ℂ and e0 are used)
        grid: grid of c
        cg_tol: stop once ‖r‖ ≤ cg_tol·max(‖r0‖, ‖b‖)
        cg_max: CG iteration cap
        u0: warm start
        dirichlet: pinned displacement values; gauge mode when None

    Returns:
        (nx, ny, 2) displacement; gauge-fixed (zero mean, zero mean skew
        gradient) in gauge mode

    Raises:
        NonConvergence: cg_max exceeded, with the final relative residual
    """
    cfg = get_config("solver")
    cg_tol = cfg["cg_tol"] if cg_tol is None else cg_tol
    cg_max = cfg["cg_max"] if cg_max is None else cg_max
    C, e0 = params.stiffness, params.misfit

    if dirichlet is None:
        basis = _rigid_basis(grid)

        def constrain(v):
            return _project_rigid(v, basis)
    else:
        mask = dirichlet.mask

        def constrain(v):
            v = v.copy()
            v[mask] = 0.0
            return v

    x = np.zeros((grid.nx, grid.ny, 2)) if u0 is None else np.array(u0, dtype=float, copy=True)
    if dirichlet is None:
        x = _project_rigid(x, basis)
    else:
        x[dirichlet.mask] = dirichlet.u[dirichlet.mask]

    b = constrain(elastic_rhs(c, C, e0, grid))
    r = constrain(b - elastic_operator(x, C, grid))
    ref = max(float(np.linalg.norm(r)), float(np.linalg.norm(b)))
    threshold = cg_tol * ref
    rr = float(np.sum(r * r))

    it = 0
    if ref > 0.0 and np.sqrt(rr) > threshold:
        p = r.copy()
        for it in range(1, cg_max + 1):
            ap = constrain(elastic_operator(p, C, grid))
            alpha = rr / float(np.sum(p * ap))
            x += alpha * p
            r -= alpha * ap
            rr_new = float(np.sum(r * r))
            if np.sqrt(rr_new) <= threshold:
                rr = rr_new
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
        else:
            residual = np.sqrt(rr) / ref
            raise NonConvergence(f"CG did not reach {cg_tol:.1e} in {cg_max} iterations "
                                 f"(relative residual {residual:.3e})", residual=residual)

    logger.debug(f"elastic_solve: {it} CG iterations, relative residual {np.sqrt(rr) / ref if ref else 0.0:.3e}")
    if dirichlet is None:
        x = skew_normalize(x, grid)
    return x


# ============================================================================
# PHASE UPDATE
# ============================================================================

def project_mass(y: np.ndarray, mass: float, grid: Grid, pinned: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Projection onto {0 ≤ c ≤ 1, mean(c) = mass}: c = clip(y + τ, 0, 1) on free nodes

    τ is found by safeguarded Newton iteration on the piecewise-linear mean
    (shift, then clamp, then re-shift on the unclamped nodes), falling back
    to bisection. Pinned nodes keep their values.

    Raises:
        RangeError: if no shift reaches the target mean
        NonConvergence: if neither Newton nor bisection brings the mean
            within mass_tol; residual is the remaining mean error
    """
    cfg = get_config("solver")
    y = np.asarray(y, dtype=float)
    weights = lumped_mass(grid)
    free = np.ones(y.shape, dtype=bool) if pinned is None else ~np.asarray(pinned, dtype=bool)
    wf, yf = weights[free], y[free]

    target = mass * grid.area - float(np.sum(weights[~free] * np.clip(y[~free], 0.0, 1.0)))
    tol = cfg["mass_tol"] * grid.area
    if wf.size == 0 or target < -tol or target > wf.sum() + tol:
        raise RangeError(f"mean {mass} is not reachable with the pinned values")

    def moved(tau):
        return float(np.sum(wf * np.clip(yf + tau, 0.0, 1.0)))

    lo, hi = -float(yf.max()), 1.0 - float(yf.min())
    tau = min(max(0.0, lo), hi)
    err = moved(tau) - target
    for _ in range(cfg["mass_max_iter"]):
        if abs(err) <= tol:
            break
        if err < 0.0:
            lo = tau
        else:
            hi = tau
        z = yf + tau
        active = float(wf[(z > 0.0) & (z < 1.0)].sum())
        candidate = tau - err / active if active > 0.0 else np.nan
        tau = candidate if lo < candidate < hi else 0.5 * (lo + hi)
        err = moved(tau) - target
    else:
        # plain bisection on whatever bracket is left
        for _ in range(200):
            if abs(err) <= tol or hi - lo <= 0.0:
                break
            tau = 0.5 * (lo + hi)
            err = moved(tau) - target
            if err < 0.0:
                lo = tau
            else:
                hi = tau
        if abs(err) > tol:
            miss = abs(err) / grid.area
            raise NonConvergence(f"project_mass: mean misses {mass} by {miss:.3e} after bisection", residual=miss)

    out = y.copy()
    out[free] = np.clip(yf + tau, 0.0, 1.0)
    return out


def _projector(c: np.ndarray, grid: Grid, mass: Optional[float], dirichlet: Optional[Dirichlet]):
    pinned = dirichlet.mask if dirichlet is not None and dirichlet.pins_phase else None

    def project(y):
        y = np.array(y, dtype=float, copy=True)
        if pinned is not None:
            y[pinned] = c[pinned]
        if mass is not None:
            return project_mass(y, mass, grid, pinned)
        return np.clip(y, 0.0, 1.0)

    return project, pinned


def phase_step(fp: FieldPair, params: MaterialParams, step: float, mass: Optional[float] = None,
               dirichlet: Optional[Dirichlet] = None) -> Tuple[np.ndarray, float]:
    """
    One projected-gradient step on c with backtracking, u held fixed

    The gradient is taken in the lumped L² metric. The step is halved until
    the energy does not increase, at most max_halvings times.

    Returns:
        (new c, accepted step); c unchanged when the projected gradient
        vanishes

    Raises:
        StepFailure: no admissible step after max_halvings halvings
    """
    if not step > 0.0:
        raise ParameterError(f"step must be positive, got {step}")
    cfg = get_config("solver")
    grid = fp.grid
    project, pinned = _projector(fp.c, grid, mass, dirichlet)

    g = phase_gradient(fp, params) / lumped_mass(grid)
    if pinned is not None:
        g[pinned] = 0.0

    trial = project(fp.c - step * g)
    if np.max(np.abs(fp.c - trial)) / step <= cfg["stationary_tol"]:
        return fp.c.copy(), step

    e0 = energy(fp, params).total
    for _ in range(cfg["max_halvings"] + 1):
        e_trial = energy(FieldPair(c=trial, u=fp.u, grid=grid), params).total
        if e_trial <= e0:
            return trial, step
        step *= 0.5
        trial = project(fp.c - step * g)
    raise StepFailure(f"no energy decrease after {cfg['max_halvings']} halvings (E={e0:.6e})")


# ============================================================================
# ALTERNATING MINIMIZATION
# ============================================================================

def minimize(init: FieldPair, params: MaterialParams, cfg: Optional[SolveConfig] = None,
             dirichlet: Optional[Dirichlet] = None) -> SolveReport:
    """
    Alternate exact elastic solves and phase steps

    Stops when the relative energy decrease drops below tol_rel (converged),
    when a phase step cannot decrease the energy (converged), or at max_outer
    (not converged).

    Raises:
        NonConvergence: from an elastic solve; `partial` holds the report so far
    """
    cfg = cfg or SolveConfig()
    grid = init.grid
    fp = init.copy()
    if dirichlet is not None:
        dirichlet.apply(fp)
    if cfg.mass is not None:
        _, pinned = _projector(fp.c, grid, cfg.mass, dirichlet)
        fp.c = project_mass(fp.c, cfg.mass, grid, pinned)

    solver_cfg = get_config("solver")
    h = min(grid.hx, grid.hy)
    step0 = cfg.step0 if cfg.step0 is not None else solver_cfg["step_scale"] * h * h / params.epsilon
    step_cap = solver_cfg["max_step_factor"] * step0

    trace: List[float] = []
    means: List[float] = []
    logger.info(f"minimize: grid {grid.nx}x{grid.ny}, eps={params.epsilon}, "
                f"mass={cfg.mass}, mode={'dirichlet' if dirichlet else 'gauge'}")

    def partial(iterations, converged):
        return SolveReport(energy_trace=trace, iterations=iterations, converged=converged,
                           final=fp.copy(), breakdown=energy(fp, params), mean_trace=means)

    def solve_u(iterations):
        try:
            fp.u = elastic_solve(fp.c, params, grid, cfg.cg_tol, cfg.cg_max, u0=fp.u, dirichlet=dirichlet)
        except NonConvergence as e:
            raise NonConvergence(str(e), residual=e.residual, partial=partial(iterations, False)) from e

    solve_u(0)
    current = energy(fp, params).total
    trace.append(current)
    means.append(field_mean(fp.c, grid))

    converged = False
    iterations = 0
    step = step0
    for k in range(1, cfg.max_outer + 1):
        try:
            c_new, accepted = phase_step(fp, params, step, cfg.mass, dirichlet)
        except StepFailure as e:
            logger.warning(f"minimize: {e}; treating as converged")
            converged = True
            break
        fp.c = c_new
        solve_u(k)
        new = energy(fp, params).total
        trace.append(new)
        means.append(field_mean(fp.c, grid))
        iterations = k

        rel = (current - new) / abs(current) if current != 0.0 else 0.0
        current = new
        if rel < cfg.tol_rel:
            converged = True
            break
        step = min(2.0 * accepted, step_cap)

    report = partial(iterations, converged)
    logger.info(f"minimize: {iterations} outer iterations, converged={converged}, E={report.breakdown.total:.10e}")
    return report


def random_init(grid: Grid, params: MaterialParams, seed: int = None) -> FieldPair:
    """Independent uniform c ∈ [μ0, μ1] per node, u from an elastic solve"""
    params.wells.require_double()
    seed = _DEFAULTS["seed"] if seed is None else seed
    rng = np.random.default_rng(seed)
    c = rng.uniform(params.wells.mu0, params.wells.mu1, size=(grid.nx, grid.ny))
    u = elastic_solve(c, params, grid)
    return FieldPair(c=c, u=u, grid=grid)


__all__ = [
    'SolveConfig',
    'Dirichlet',
    'SolveReport',
    'elastic_solve',
    'project_mass',
    'phase_step',
    'minimize',
    'random_init',
]
