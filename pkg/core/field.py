"""
Field Discretization - Rectangular Grids, Strains and the Discrete Energy

Nodal fields (phase c, displacement u) live on a rectangular grid and are
interpolated bilinearly on every cell. Gradients are taken at the four
2×2 Gauss points of each cell; affine displacements therefore have an exact
constant strain and the discrete energy of a ground state is zero to round-off.
The 2×2 rule stands in for a one-point cell-midpoint rule, which leaves the
hourglass modes of a bilinear cell with zero strain.

    I_ε = Σ_cells Σ_q (hx·hy/4)·[ f(c)/ε + ε‖∇c‖² + ℂ(e(u) − c e0):(e(u) − c e0)/ε ]

Also here:
- cell_gradient / symmetrized_gradient: cell-centered ∇u (mean of the four
  corner differences)
- elastic_operator / elastic_rhs / phase_gradient: the discrete derivatives
  used by the solver
- snapshot text format: header `gammaphase-field v1 nx ny lx ly origin_x origin_y`
  followed by `i j c u1 u2` rows

Limitations:
- Rectangles only; no unstructured meshes
"""
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union
import logging
import math

import numpy as np

from config.solver_config import get_config
from core.errors import DomainError, ParameterError
from core.tensor import Misfit, Stiffness, from_voigt, quad_form, sym, to_voigt
from core.wellmodel import ChemParams, WellAnalysis, analyze_wells, eval_dfbar, eval_f
from utils.io_helpers import fmt17

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = "gammaphase-field"
SNAPSHOT_VERSION = "v1"

_G = 0.5 * (1.0 - 1.0 / math.sqrt(3.0))
# local (xi, eta) of the 2x2 Gauss points
GAUSS_POINTS = ((_G, _G), (1.0 - _G, _G), (_G, 1.0 - _G), (1.0 - _G, 1.0 - _G))


# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class Grid:
    """Node (i, j) sits at origin + (i·hx, j·hy)"""
    nx: int
    ny: int
    lx: float
    ly: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ParameterError(f"grid needs at least 2 nodes per direction, got {self.nx}x{self.ny}")
        if not (self.lx > 0.0 and self.ly > 0.0):
            raise ParameterError(f"grid extents must be positive, got {self.lx}x{self.ly}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def box(cls, x0: float, x1: float, y0: float, y1: float, h: float) -> "Grid":
        """Grid on [x0, x1]×[y0, y1] with spacing close to h (never coarser)"""
        nx = int(math.ceil((x1 - x0) / h - 1e-9)) + 1
        ny = int(math.ceil((y1 - y0) / h - 1e-9)) + 1
        return cls(nx=nx, ny=ny, lx=x1 - x0, ly=y1 - y0, origin=(x0, y0))

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Node coordinates as (nx, ny) arrays"""
        xs = self.origin[0] + self.hx * np.arange(self.nx)
        ys = self.origin[1] + self.hy * np.arange(self.ny)
        return np.meshgrid(xs, ys, indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates as an (nx, ny, 2) array"""
        x, y = self.coordinates()
        return np.stack([x, y], axis=-1)

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + self.hx * (np.arange(self.nx - 1) + 0.5)
        ys = self.origin[1] + self.hy * (np.arange(self.ny - 1) + 0.5)
        return np.meshgrid(xs, ys, indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.nx, self.ny), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def shifted(self, dx: float, dy: float) -> "Grid":
        return replace(self, origin=(self.origin[0] + dx, self.origin[1] + dy))


@dataclass
class FieldPair:
    """Phase c (nx, ny) and displacement u (nx, ny, 2) on a grid"""
    c: np.ndarray
    u: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        g = self.grid
        if self.c.shape != (g.nx, g.ny) or self.u.shape != (g.nx, g.ny, 2):
            raise ParameterError(f"field shapes {self.c.shape}/{self.u.shape} do not match grid {g.nx}x{g.ny}")
        if np.any(self.c < -1e-12) or np.any(self.c > 1.0 + 1e-12):
            raise DomainError("phase field must stay within [0, 1]")
        self.c = np.clip(self.c, 0.0, 1.0)

    def copy(self) -> "FieldPair":
        return FieldPair(c=self.c.copy(), u=self.u.copy(), grid=self.grid)


@dataclass(frozen=True)
class MaterialParams:
    """Everything the energy depends on: chemistry, wells, ℂ, e0 and ε"""
    chem: ChemParams
    wells: WellAnalysis
    stiffness: Stiffness
    misfit: Misfit
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def build(cls, chem: ChemParams, stiffness: Stiffness, misfit: Misfit, epsilon: float) -> "MaterialParams":
        return cls(chem=chem, wells=analyze_wells(chem), stiffness=stiffness, misfit=misfit, epsilon=epsilon)

    def with_epsilon(self, epsilon: float) -> "MaterialParams":
        return replace(self, epsilon=epsilon)


@dataclass
class EnergyBreakdown:
    """Chemical, gradient and elastic parts of the discrete energy"""
    chem: float
    grad: float
    elastic: float
    total: float
    density: Optional[np.ndarray] = None

    def as_dict(self) -> dict:
        return {"chem": self.chem, "grad": self.grad, "elastic": self.elastic, "total": self.total}


# ============================================================================
# GAUSS-POINT OPERATORS
# ============================================================================

def _corners(w: np.ndarray):
    return w[:-1, :-1], w[1:, :-1], w[:-1, 1:], w[1:, 1:]


def interpolate(w: np.ndarray) -> np.ndarray:
    """Bilinear values at the Gauss points, shape (4, nx-1, ny-1, ...)"""
    w00, w10, w01, w11 = _corners(w)
    return np.stack([
        (1 - xi) * (1 - eta) * w00 + xi * (1 - eta) * w10 + (1 - xi) * eta * w01 + xi * eta * w11
        for xi, eta in GAUSS_POINTS
    ])


def point_gradients(w: np.ndarray, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """(∂x w, ∂y w) at the Gauss points, each of shape (4, nx-1, ny-1, ...)"""
    w00, w10, w01, w11 = _corners(w)
    dx = np.stack([((1 - eta) * (w10 - w00) + eta * (w11 - w01)) / grid.hx for _, eta in GAUSS_POINTS])
    dy = np.stack([((1 - xi) * (w01 - w00) + xi * (w11 - w10)) / grid.hy for xi, _ in GAUSS_POINTS])
    return dx, dy


def scatter(grid: Grid, gv: Optional[np.ndarray] = None, gx: Optional[np.ndarray] = None,
            gy: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Adjoint of (interpolate, point_gradients)

    Returns the nodal array r with Σ r·w = Σ_q gv·w_q + gx·∂x w_q + gy·∂y w_q.
    """
    ref = next(a for a in (gv, gx, gy) if a is not None)
    out = np.zeros((grid.nx, grid.ny) + ref.shape[3:])
    zero = np.zeros_like(ref)
    gv = zero if gv is None else gv
    gx = zero if gx is None else gx / grid.hx
    gy = zero if gy is None else gy / grid.hy
    for q, (xi, eta) in enumerate(GAUSS_POINTS):
        v, x, y = gv[q], gx[q], gy[q]
        out[:-1, :-1] += (1 - xi) * (1 - eta) * v - (1 - eta) * x - (1 - xi) * y
        out[1:, :-1] += xi * (1 - eta) * v + (1 - eta) * x - xi * y
        out[:-1, 1:] += (1 - xi) * eta * v - eta * x + (1 - xi) * y
        out[1:, 1:] += xi * eta * v + eta * x + xi * y
    return out


def point_strains(u: np.ndarray, grid: Grid) -> np.ndarray:
    """e(u) at the Gauss points, shape (4, nx-1, ny-1, 2, 2)"""
    dx, dy = point_gradients(u, grid)
    return sym(np.stack([dx, dy], axis=-1))


def lumped_mass(grid: Grid) -> np.ndarray:
    """Nodal share of the cell areas"""
    return scatter(grid, gv=np.full((4, grid.nx - 1, grid.ny - 1), 0.25 * grid.cell_area))


def field_mean(c: np.ndarray, grid: Grid) -> float:
    """Integral mean of the bilinear interpolant of c"""
    return float(np.sum(lumped_mass(grid) * c) / grid.area)


# ============================================================================
# GRADIENTS
# ============================================================================

def cell_gradient(w: np.ndarray, grid: Grid) -> np.ndarray:
    """
    Cell-centered gradient from the four corner differences

    Scalar w gives (nx-1, ny-1, 2); vector w gives (nx-1, ny-1, 2, 2) with
    [..., a, b] = ∂_b w_a. Exact for affine fields.
    """
    w00, w10, w01, w11 = _corners(np.asarray(w, dtype=float))
    dx = 0.5 * ((w10 - w00) + (w11 - w01)) / grid.hx
    dy = 0.5 * ((w01 - w00) + (w11 - w10)) / grid.hy
    return np.stack([dx, dy], axis=-1)


def symmetrized_gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell-centered e(u) = (∇u + ∇uᵀ)/2, shape (nx-1, ny-1, 2, 2)"""
    return sym(cell_gradient(u, grid))


# ============================================================================
# ENERGY
# ============================================================================

def energy(fp: FieldPair, params: MaterialParams, with_density: bool = False,
           mask: Optional[np.ndarray] = None) -> EnergyBreakdown:
    """
    Discrete I_ε with its three parts

    Args:
        fp: fields on a grid
        params: material bundle
        with_density: also return the per-cell energy density g_ε
        mask: optional (nx-1, ny-1) boolean; only masked cells are summed

    Returns:
        EnergyBreakdown
    """
    grid, eps = fp.grid, params.epsilon
    weight = 0.25 * grid.cell_area

    cq = interpolate(fp.c)
    chem_d = np.asarray(eval_f(params.chem, params.wells, cq)) / eps

    gx, gy = point_gradients(fp.c, grid)
    grad_d = eps * (gx * gx + gy * gy)

    strain = point_strains(fp.u, grid) - cq[..., None, None] * params.misfit.matrix
    elastic_d = quad_form(params.stiffness, strain) / eps

    # per-cell sums over the Gauss points
    chem_c = weight * chem_d.sum(axis=0)
    grad_c = weight * grad_d.sum(axis=0)
    elastic_c = weight * elastic_d.sum(axis=0)
    if mask is not None:
        chem_c, grad_c, elastic_c = chem_c[mask], grad_c[mask], elastic_c[mask]

    chem, grad, elastic = float(chem_c.sum()), float(grad_c.sum()), float(elastic_c.sum())
    density = None
    if with_density:
        density = (chem_d + grad_d + elastic_d).mean(axis=0)
        if mask is not None:
            density = np.where(mask, density, 0.0)
    return EnergyBreakdown(chem=chem, grad=grad, elastic=elastic, total=chem + grad + elastic, density=density)


def elastic_mismatch(fp: FieldPair, e0: Misfit, w: WellAnalysis = None) -> float:
    """(∫‖e(u) − c·e0‖²_F dz)^{1/2}"""
    grid = fp.grid
    cq = interpolate(fp.c)
    diff = point_strains(fp.u, grid) - cq[..., None, None] * e0.matrix
    total = 0.25 * grid.cell_area * float(np.sum(diff * diff))
    return math.sqrt(total)


# ============================================================================
# DISCRETE DERIVATIVES
# ============================================================================

def _stress(C: Stiffness, strain: np.ndarray) -> np.ndarray:
    return from_voigt(to_voigt(strain) @ C.matrix)


def elastic_operator(v: np.ndarray, C: Stiffness, grid: Grid) -> np.ndarray:
    """A·v = Bᵀ W ℂ e(v): half the Hessian of Σ_q w·ℂe(v):e(v)"""
    sigma = 0.25 * grid.cell_area * _stress(C, point_strains(v, grid))
    return scatter(grid, gx=sigma[..., :, 0], gy=sigma[..., :, 1])


def elastic_rhs(c: np.ndarray, C: Stiffness, e0: Misfit, grid: Grid) -> np.ndarray:
    """b = Bᵀ W ℂ(c e0), so the elastic minimizer solves A·u = b"""
    cq = interpolate(c)
    sigma = 0.25 * grid.cell_area * _stress(C, cq[..., None, None] * e0.matrix)
    return scatter(grid, gx=sigma[..., :, 0], gy=sigma[..., :, 1])


def elastic_objective(fp: FieldPair, C: Stiffness, e0: Misfit) -> float:
    """Σ ℂ(e(u) − c e0):(e(u) − c e0) dA (no 1/ε)"""
    cq = interpolate(fp.c)
    strain = point_strains(fp.u, fp.grid) - cq[..., None, None] * e0.matrix
    return 0.25 * fp.grid.cell_area * float(np.sum(quad_form(C, strain)))


def phase_gradient(fp: FieldPair, params: MaterialParams) -> np.ndarray:
    """Derivative of the discrete I_ε with respect to the nodal values of c"""
    grid, eps = fp.grid, params.epsilon
    weight = 0.25 * grid.cell_area
    clamp = get_config("solver")["clamp"]

    cq = interpolate(fp.c)
    dchem = np.asarray(eval_dfbar(params.chem, np.clip(cq, clamp, 1.0 - clamp))) / eps

    gx, gy = point_gradients(fp.c, grid)

    e0 = params.misfit.matrix
    sigma = _stress(params.stiffness, point_strains(fp.u, grid) - cq[..., None, None] * e0)
    delastic = -2.0 * np.einsum("...ij,ij->...", sigma, e0) / eps

    return scatter(grid, gv=weight * (dchem + delastic), gx=weight * 2.0 * eps * gx, gy=weight * 2.0 * eps * gy)


# ============================================================================
# DIAGNOSTICS
# ============================================================================

def well_fraction(c: np.ndarray, w: WellAnalysis, band: float = 0.05) -> float:
    """Fraction of nodes within `band` of either well"""
    near = (np.abs(c - w.mu0) < band) | (np.abs(c - w.mu1) < band)
    return float(np.mean(near))


def interface_length(c: np.ndarray, grid: Grid, w: WellAnalysis) -> float:
    """Total variation of the phase thresholded at (μ0 + μ1)/2"""
    chi = (c > 0.5 * (w.mu0 + w.mu1)).astype(float)
    jumps_x = np.abs(np.diff(chi, axis=0)).sum() * grid.hy
    jumps_y = np.abs(np.diff(chi, axis=1)).sum() * grid.hx
    return float(jumps_x + jumps_y)


# ============================================================================
# SNAPSHOTS
# ============================================================================

def write_snapshot(fp: FieldPair, path: Union[str, Path]) -> Path:
    """Write the text snapshot; rows `i j c u1 u2` in row-major (i, j) order"""
    g = fp.grid
    path = Path(path)
    lines = [" ".join([SNAPSHOT_MAGIC, SNAPSHOT_VERSION, str(g.nx), str(g.ny),
                       fmt17(g.lx), fmt17(g.ly), fmt17(g.origin[0]), fmt17(g.origin[1])])]
    for i in range(g.nx):
        for j in range(g.ny):
            lines.append(f"{i} {j} {fmt17(fp.c[i, j])} {fmt17(fp.u[i, j, 0])} {fmt17(fp.u[i, j, 1])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_snapshot(path: Union[str, Path]) -> FieldPair:
    """Parse a snapshot written by write_snapshot"""
    rows = Path(path).read_text().splitlines()
    head = rows[0].split()
    if len(head) != 8 or head[0] != SNAPSHOT_MAGIC or head[1] != SNAPSHOT_VERSION:
        raise ParameterError(f"not a {SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} snapshot: {rows[0][:80]}")
    nx, ny = int(head[2]), int(head[3])
    grid = Grid(nx=nx, ny=ny, lx=float(head[4]), ly=float(head[5]), origin=(float(head[6]), float(head[7])))
    c = np.zeros((nx, ny))
    u = np.zeros((nx, ny, 2))
    for row in rows[1:]:
        if not row.strip():
            continue
        i, j, cv, u1, u2 = row.split()
        c[int(i), int(j)] = float(cv)
        u[int(i), int(j)] = (float(u1), float(u2))
    return FieldPair(c=c, u=u, grid=grid)


__all__ = [
    'Grid',
    'FieldPair',
    'MaterialParams',
    'EnergyBreakdown',
    'GAUSS_POINTS',
    'interpolate',
    'point_gradients',
    'scatter',
    'point_strains',
    'lumped_mass',
    'field_mean',
    'cell_gradient',
    'symmetrized_gradient',
    'energy',
    'elastic_mismatch',
    'elastic_operator',
    'elastic_rhs',
    'elastic_objective',
    'phase_gradient',
    'well_fraction',
    'interface_length',
    'write_snapshot',
    'read_snapshot',
]
