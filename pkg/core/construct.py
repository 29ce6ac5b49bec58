"""
Constructions - Laminates, Optimal Profiles and Recovery Fields

Components:
- Laminate: parallel interfaces with a shared normal, alternating phases
- reference_pair(): the sharp single-interface state (ū_ν, c̄_ν)
- sharp_energy(): κ(ν) times total interface length
- build_profile(): tabulated φ(s) = ∫_{μ0}^s ε/√(ε + W(r)) dr and its inverse
- recovery_pair(): c = φ⁻¹(d(z) + shift) with d the signed distance to the
  interfaces, u from the rank-one ansatz so that e(u) = c·e0
- mass_tuned_recovery() / ball_recovery(): shift selection for a prescribed mean
- detect_laminate(): dominant interface normal of a computed phase

Sign convention: d < 0 in μ0 regions, d > 0 in μ1 regions. φ⁻¹ is extended
by μ0 below 0 and by μ1 above φ(μ1), so the transition sits on the μ1 side
unless shifted.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from config.solver_config import get_config
from core.errors import GeometryError, IncompatibleMisfit, ParameterError, QuadratureError, RangeError
from core.field import FieldPair, Grid, MaterialParams, cell_gradient, field_mean, interface_length
from core.tensor import Misfit, RankOneConnection, Stiffness, canonical_normal, is_admissible, quad_form
from core.wellmodel import ChemParams, WellAnalysis, eval_f

logger = logging.getLogger(__name__)

Rect = Tuple[float, float, float, float]


# ============================================================================
# LAMINATES
# ============================================================================

@dataclass(frozen=True)
class Laminate:
    """
    Interfaces {z·ν = t_k} across a rectangle (x0, x1, y0, y1)

    phase0 is the well index (0 → μ0, 1 → μ1) on the side t < offsets[0];
    phases alternate across each interface. No offsets means a single phase.
    """
    normal: np.ndarray
    offsets: Tuple[float, ...]
    phase0: int
    domain: Rect

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if n.shape != (2,) or norm == 0.0:
            raise ParameterError("laminate normal must be a nonzero 2-vector")
        object.__setattr__(self, "normal", n / norm)
        offsets = tuple(float(t) for t in self.offsets)
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ParameterError(f"laminate offsets must be strictly increasing, got {offsets}")
        object.__setattr__(self, "offsets", offsets)
        if self.phase0 not in (0, 1):
            raise ParameterError(f"phase0 must be 0 (mu0) or 1 (mu1), got {self.phase0}")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ParameterError(f"laminate domain must be a nondegenerate rectangle, got {self.domain}")

    @classmethod
    def from_angle(cls, angle: float, offsets: Sequence[float], phase0: int, domain: Rect) -> "Laminate":
        return cls(normal=np.array([math.cos(angle), math.sin(angle)]), offsets=tuple(offsets),
                   phase0=phase0, domain=tuple(domain))

    def phase_index(self, t: np.ndarray) -> np.ndarray:
        """Well index (0 or 1) at normal coordinate t"""
        crossed = np.searchsorted(np.asarray(self.offsets), np.asarray(t, dtype=float), side="left")
        return (self.phase0 + crossed) % 2

    def signed_distance(self, t: np.ndarray) -> np.ndarray:
        """Distance to the nearest interface, negative in μ0 regions"""
        t = np.asarray(t, dtype=float)
        if not self.offsets:
            return np.where(self.phase0 == 1, np.inf, -np.inf) * np.ones_like(t)
        dist = np.min(np.abs(t[..., None] - np.asarray(self.offsets)), axis=-1)
        return np.where(self.phase_index(t) == 1, dist, -dist)

    def interface_lengths(self) -> List[float]:
        return [_chord_length(self.normal, t, self.domain) for t in self.offsets]

    def validate(self, connections: List[RankOneConnection]) -> None:
        """
        Raises:
            IncompatibleMisfit: if the normal is not a compatible one
        """
        if self.offsets and not is_admissible(self.normal, connections):
            angle = math.atan2(self.normal[1], self.normal[0])
            raise IncompatibleMisfit(f"laminate normal at angle {angle:.6f} is not rank-one compatible")


def _chord_length(nu: np.ndarray, t: float, domain: Rect) -> float:
    """Length of {z·ν = t} inside the rectangle (Liang–Barsky clipping)"""
    x0, x1, y0, y1 = domain
    tau = np.array([-nu[1], nu[0]])
    base = t * nu
    lo, hi = -math.inf, math.inf
    for k, (a, b) in enumerate(((x0, x1), (y0, y1))):
        if abs(tau[k]) < 1e-15:
            if not (a <= base[k] <= b):
                return 0.0
            continue
        s1, s2 = (a - base[k]) / tau[k], (b - base[k]) / tau[k]
        lo, hi = max(lo, min(s1, s2)), min(hi, max(s1, s2))
    return max(hi - lo, 0.0)


def sharp_energy(lam: Laminate, kappa: Union[float, Callable[[np.ndarray], float]]) -> float:
    """Σ_k κ(ν)·(length of interface k inside the domain)"""
    k = kappa(lam.normal) if callable(kappa) else float(kappa)
    return k * float(sum(lam.interface_lengths()))


def _sharp_primitive(lam: Laminate, delta: float, t: np.ndarray) -> np.ndarray:
    """∫_0^t (c̄ − μ0) along the normal for the laminate's sharp phase"""
    t = np.asarray(t, dtype=float)
    edges = [-np.inf, *lam.offsets, np.inf]
    out = np.zeros_like(t)
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if (lam.phase0 + k) % 2 == 1:
            out += np.clip(t, a, b) - np.clip(0.0, a, b)
    return delta * out


def reference_pair(conn: RankOneConnection, w: WellAnalysis, z: np.ndarray, e0: Misfit) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sharp state across {z·ν = 0}: ū = μ0·e0·z + a·max(z·ν, 0), c̄ ∈ {μ0, μ1}

    For an exact connection the upper branch equals (μ1·e0 + S)·z. Batched
    over the leading axes of z.
    """
    z = np.asarray(z, dtype=float)
    t = z @ conn.nu
    u = w.mu0 * (z @ e0.matrix.T) + np.maximum(t, 0.0)[..., None] * conn.a
    c = np.where(t > 0.0, w.mu1, w.mu0)
    return u, c


# ============================================================================
# 1-D PROFILES
# ============================================================================

class WellMode(str, Enum):
    CHEM_ONLY = "ChemOnly"
    SHIFTED = "Shifted"


@dataclass(frozen=True)
class ProfileSpec:
    """Monotone table of φ over [μ0, μ1]; inversion by linear interpolation"""
    epsilon: float
    well_mode: WellMode
    s_table: np.ndarray
    phi_table: np.ndarray

    @property
    def phi_max(self) -> float:
        return float(self.phi_table[-1])

    def phi(self, s: np.ndarray) -> np.ndarray:
        return np.interp(s, self.s_table, self.phi_table)

    def phi_inv(self, t: np.ndarray) -> np.ndarray:
        """φ⁻¹, constant μ0 below 0 and μ1 above φ(μ1)"""
        return np.interp(t, self.phi_table, self.s_table)


def build_profile(w: WellAnalysis, p: ChemParams, epsilon: float, mode: WellMode = WellMode.CHEM_ONLY,
                  e0: Optional[Misfit] = None, C: Optional[Stiffness] = None) -> ProfileSpec:
    """
    Tabulate φ(s) = ∫_{μ0}^s ε/√(ε + W(r)) dr

    W = f for ChemOnly; W = f + ℂ((r−μ0)e0):((r−μ0)e0) for Shifted (‖·‖_F²
    when no stiffness is given), the elastic cost of c ≠ μ0 under u = μ0·e0·z.

    Raises:
        ParameterError: epsilon ≤ 0, single well, or Shifted without e0
        QuadratureError: non-finite table
    """
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    w.require_double()
    mode = WellMode(mode)
    elastic = 0.0
    if mode == WellMode.SHIFTED:
        if e0 is None:
            raise ParameterError("Shifted well needs the misfit e0")
        elastic = quad_form(C, e0.matrix) if C is not None else float(np.sum(e0.matrix ** 2))

    cfg = get_config("profile")
    s = np.linspace(w.mu0, w.mu1, cfg["table_size"])
    x, wts = np.polynomial.legendre.leggauss(cfg["panel_nodes"])
    half = 0.5 * np.diff(s)
    mid = 0.5 * (s[:-1] + s[1:])
    pts = mid[:, None] + half[:, None] * x[None, :]
    well = np.asarray(eval_f(p, w, pts)) + elastic * (pts - w.mu0) ** 2
    pieces = half * np.sum(wts * epsilon / np.sqrt(epsilon + well), axis=1)
    phi = np.concatenate([[0.0], np.cumsum(pieces)])
    if not np.all(np.isfinite(phi)):
        raise QuadratureError("non-finite profile table")

    spec = ProfileSpec(epsilon=epsilon, well_mode=mode, s_table=s, phi_table=phi)
    logger.debug(f"build_profile: eps={epsilon}, mode={mode.value}, phi(mu1)={spec.phi_max:.6e}")
    return spec


def profile_center_shift(spec: ProfileSpec) -> float:
    """
    Shift s* with ∫(φ⁻¹(t + s*) − g0(t)) dt = 0, g0 the sharp step at 0

    s* = ∫_0^{φ(μ1)} (μ1 − φ⁻¹) dt / (μ1 − μ0), exact on the linear table.
    """
    s, phi = spec.s_table, spec.phi_table
    mu0, mu1 = float(s[0]), float(s[-1])
    area = float(np.sum(0.5 * (s[1:] + s[:-1]) * np.diff(phi)))
    return (mu1 * spec.phi_max - area) / (mu1 - mu0)


# ============================================================================
# RECOVERY FIELDS
# ============================================================================

def _aligned_jump(lam: Laminate, conn: RankOneConnection) -> np.ndarray:
    align = float(lam.normal @ conn.nu)
    if abs(align) < 1.0 - 1e-9:
        raise ParameterError("laminate normal does not match the connection normal")
    return conn.a if align > 0.0 else -conn.a


def _check_separation(lam: Laminate, epsilon: float) -> None:
    gap = get_config("profile")["separation_factor"] * math.sqrt(epsilon)
    for a, b in zip(lam.offsets, lam.offsets[1:]):
        if b - a < gap:
            raise GeometryError(f"interfaces at {a} and {b} are closer than {gap:.4g}; transition layers overlap")


def _recovery_fields(lam: Laminate, a: np.ndarray, spec: ProfileSpec, grid: Grid, w: WellAnalysis,
                     e0: Misfit, shift: float) -> FieldPair:
    nu = lam.normal
    z = grid.points()
    t_nodes = z @ nu
    c = spec.phi_inv(lam.signed_distance(t_nodes) + shift)

    # G(t) = ∫(c − μ0) along ν by cumulative midpoint rule, anchored at the
    # lowest t to the sharp primitive
    t_lo, t_hi = float(t_nodes.min()), float(t_nodes.max())
    h = min(grid.hx, grid.hy)
    n = max(int(math.ceil((t_hi - t_lo) / (h / 16.0))), 16)
    line = np.linspace(t_lo, t_hi, n + 1)
    mids = 0.5 * (line[:-1] + line[1:])
    excess = spec.phi_inv(lam.signed_distance(mids) + shift) - w.mu0
    prim = np.concatenate([[0.0], np.cumsum(excess * np.diff(line))])
    prim += float(_sharp_primitive(lam, w.delta, np.array(t_lo)))
    g = np.interp(t_nodes, line, prim)

    u = w.mu0 * (z @ e0.matrix.T) + (g / w.delta)[..., None] * a
    return FieldPair(c=c, u=u, grid=grid)


def recovery_pair(lam: Laminate, conn: RankOneConnection, spec: ProfileSpec, grid: Grid,
                  w: WellAnalysis, e0: Misfit, shift: float = 0.0) -> FieldPair:
    """
    Recovery field for a laminate

    c(z) = φ⁻¹(d(z·ν) + shift) and u(z) = μ0·e0·z + (a/δ)·G(z·ν) where
    G' = c − μ0, so e(u) = c·e0 for an exact connection. With
    shift = profile_center_shift(spec) the fields agree with the sharp
    laminate away from the transition layers.

    Raises:
        GeometryError: adjacent interfaces closer than separation_factor·√ε
        ParameterError: laminate normal differs from conn.nu
    """
    _check_separation(lam, spec.epsilon)
    a = _aligned_jump(lam, conn)
    return _recovery_fields(lam, a, spec, grid, w, e0, shift)


def _tune_shift(mean_at: Callable[[float], float], m: float, hi: float) -> float:
    """Bisection for mean_at(s) = m on [0, hi]; mean_at is nondecreasing"""
    tol = 1e-12
    lo_mean, hi_mean = mean_at(0.0), mean_at(hi)
    if abs(lo_mean - m) <= tol:
        return 0.0
    if abs(hi_mean - m) <= tol:
        return hi
    if not (lo_mean < m < hi_mean):
        raise RangeError(f"mean {m} outside the reachable bracket [{lo_mean:.15g}, {hi_mean:.15g}]")
    lo = 0.0
    s = 0.5 * (lo + hi)
    for _ in range(200):
        s = 0.5 * (lo + hi)
        value = mean_at(s)
        if abs(value - m) <= tol:
            break
        if value < m:
            lo = s
        else:
            hi = s
    return s


def mass_tuned_recovery(lam: Laminate, conn: RankOneConnection, spec: ProfileSpec, grid: Grid,
                        w: WellAnalysis, e0: Misfit, m: float) -> Tuple[FieldPair, float]:
    """
    Recovery field whose phase has mean m, with the selected shift

    Bisects on s ∈ [0, φ(μ1)] until |mean(c) − m| ≤ 1e-12; mean(c_s) is
    nondecreasing in s.

    Raises:
        RangeError: m outside [mean at s = 0, mean at s = φ(μ1)]
    """
    _check_separation(lam, spec.epsilon)
    a = _aligned_jump(lam, conn)
    t_nodes = grid.points() @ lam.normal
    dist = lam.signed_distance(t_nodes)

    def mean_at(s):
        return field_mean(spec.phi_inv(dist + s), grid)

    s = _tune_shift(mean_at, m, spec.phi_max)
    logger.info(f"mass_tuned_recovery: m={m}, shift={s:.12e}")
    return _recovery_fields(lam, a, spec, grid, w, e0, s), s


def ball_recovery(grid: Grid, params: MaterialParams, m: float, z0: Optional[Tuple[float, float]] = None,
                  spec: Optional[ProfileSpec] = None) -> Tuple[FieldPair, float]:
    """
    Single-phase mass perturbation: a μ1 droplet in a μ0 background

    η solves μ0(A − πη²) + μ1·πη² = m·A; c = φ⁻¹(η − |z − z0| + s) with s
    tuned to the mean m, u = μ0·e0·z. The profile defaults to the Shifted
    well at params.epsilon.

    Returns:
        (fields, eta)

    Raises:
        RangeError: m outside [μ0, μ1]
        GeometryError: B(z0, 2η) leaves the grid
    """
    w, e0 = params.wells, params.misfit
    if not (w.mu0 <= m <= w.mu1):
        raise RangeError(f"mean {m} outside [mu0, mu1]")
    z = grid.points()
    u = w.mu0 * (z @ e0.matrix.T)
    if z0 is None:
        z0 = (grid.origin[0] + 0.5 * grid.lx, grid.origin[1] + 0.5 * grid.ly)
    eta = math.sqrt((m - w.mu0) * grid.area / (math.pi * w.delta))
    if eta == 0.0:
        return FieldPair(c=np.full((grid.nx, grid.ny), w.mu0), u=u, grid=grid), 0.0
    if spec is None:
        spec = build_profile(w, params.chem, params.epsilon, WellMode.SHIFTED, e0=e0, C=params.stiffness)

    x0, y0 = grid.origin
    room = min(z0[0] - x0, x0 + grid.lx - z0[0], z0[1] - y0, y0 + grid.ly - z0[1])
    if 2.0 * eta > room:
        raise GeometryError(f"ball of radius 2*eta={2.0 * eta:.4g} around {z0} does not fit in the grid")

    dist = eta - np.hypot(z[..., 0] - z0[0], z[..., 1] - z0[1])

    def mean_at(s):
        return field_mean(spec.phi_inv(dist + s), grid)

    s = _tune_shift(mean_at, m, spec.phi_max)
    logger.info(f"ball_recovery: m={m}, eta={eta:.6e}, shift={s:.6e}")
    return FieldPair(c=spec.phi_inv(dist + s), u=u, grid=grid), eta


# ============================================================================
# LAMINATE DETECTION
# ============================================================================

@dataclass(frozen=True)
class LaminateDetection:
    normal: Optional[np.ndarray]
    admissible: bool
    coherence: float
    interface_length: float


def detect_laminate(fp: FieldPair, w: WellAnalysis, connections: List[RankOneConnection],
                    tol: float = 1e-3) -> LaminateDetection:
    """
    Dominant interface normal of the thresholded phase

    The normal is the top eigenvector of Σ ∇χ⊗∇χ over the cells (χ the
    indicator of c above the well midpoint); coherence = (λ1 − λ2)/(λ1 + λ2)
    is 1 for a perfect laminate. A phase without interfaces is admissible.
    """
    chi = (fp.c > 0.5 * (w.mu0 + w.mu1)).astype(float)
    grad = cell_gradient(chi, fp.grid).reshape(-1, 2)
    tensor = grad.T @ grad
    length = interface_length(fp.c, fp.grid, w)
    if np.trace(tensor) == 0.0:
        return LaminateDetection(normal=None, admissible=True, coherence=0.0, interface_length=length)
    evals, evecs = np.linalg.eigh(tensor)
    nu, _ = canonical_normal(evecs[:, 1])
    coherence = float((evals[1] - evals[0]) / (evals[1] + evals[0]))
    return LaminateDetection(normal=nu, admissible=is_admissible(nu, connections, tol=tol),
                             coherence=coherence, interface_length=length)


__all__ = [
    'Laminate',
    'WellMode',
    'ProfileSpec',
    'LaminateDetection',
    'reference_pair',
    'sharp_energy',
    'build_profile',
    'profile_center_shift',
    'recovery_pair',
    'mass_tuned_recovery',
    'ball_recovery',
    'detect_laminate',
]
