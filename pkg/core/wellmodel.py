"""
Well Model - Regular-Solution Chemical Potential

Implements the chemical potential of an intercalation compound,

    f̄(s) = ω·s(1−s) + KT·(s·log s + (1−s)·log(1−s)),

the shifted well function f = f̄ − min f̄, the single/double well
classification and the 1-D geodesic distance

    d(s, s2) = |∫_s^s2 √f(r) dr|

that prices a transition between concentrations.

ω and KT are dimensionless; nothing in this module assumes units.

Usage:
    p = ChemParams(omega=3.0, kt=1.0)
    w = analyze_wells(p)
    sigma = mm_constant(p, w)   # surface tension 2·d(μ0, μ1)
"""
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple, Union
import logging
import math

import numpy as np

from config.solver_config import get_config
from core.errors import DomainError, ParameterError, QuadratureError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class ChemParams:
    """Enthalpy of mixing ω and thermal energy KT"""
    omega: float
    kt: float

    def __post_init__(self):
        if not (self.kt > 0.0 and math.isfinite(self.kt)):
            raise ParameterError(f"kt must be positive and finite, got {self.kt}")
        if not math.isfinite(self.omega):
            raise ParameterError(f"omega must be finite, got {self.omega}")


class WellKind(str, Enum):
    SINGLE = "SingleWell"
    DOUBLE = "DoubleWell"


@dataclass(frozen=True)
class WellAnalysis:
    """Classification of f̄ and the location of its wells"""
    kind: WellKind
    mu0: Optional[float]
    mu1: Optional[float]
    fmin: float

    @property
    def is_double(self) -> bool:
        return self.kind == WellKind.DOUBLE

    @property
    def delta(self) -> float:
        """Well gap μ1 − μ0"""
        self.require_double()
        return self.mu1 - self.mu0

    def require_double(self) -> None:
        if not self.is_double:
            raise ParameterError("operation needs a double-well potential (omega > 2 kt)")


# ============================================================================
# CHEMICAL POTENTIAL
# ============================================================================

def _check_domain(s: ArrayLike) -> np.ndarray:
    tol = get_config("wells")["domain_tol"]
    arr = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < -tol) or np.any(arr > 1.0 + tol):
        raise DomainError(f"concentration outside [0, 1]: min={np.min(arr)}, max={np.max(arr)}")
    return np.clip(arr, 0.0, 1.0)


def _xlogx(x: np.ndarray) -> np.ndarray:
    # continuous extension x log x = 0 at x = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0.0, x * np.log(np.where(x > 0.0, x, 1.0)), 0.0)


def _as_output(values: np.ndarray, template: ArrayLike) -> ArrayLike:
    if np.ndim(template) == 0:
        return float(values)
    return values


def eval_fbar(p: ChemParams, s: ArrayLike) -> ArrayLike:
    """
    Evaluate the regular-solution free energy f̄

    Args:
        p: chemical parameters
        s: concentration(s) in [0, 1]

    Returns:
        f̄(s), scalar or array matching the input

    Raises:
        DomainError: if s leaves [0, 1] by more than the domain tolerance
    """
    x = _check_domain(s)
    out = p.omega * x * (1.0 - x) + p.kt * (_xlogx(x) + _xlogx(1.0 - x))
    return _as_output(out, s)


def eval_dfbar(p: ChemParams, s: ArrayLike) -> ArrayLike:
    """Derivative ω(1−2s) + KT·log(s/(1−s)); s must lie in the open interval"""
    x = np.asarray(s, dtype=float)
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise DomainError("derivative of f̄ is only defined on (0, 1)")
    out = p.omega * (1.0 - 2.0 * x) + p.kt * (np.log(x) - np.log1p(-x))
    return _as_output(out, s)


def _dfbar_log(p: ChemParams, y: float) -> float:
    # f̄′ at s = exp(y), written so that s far below 1e-300 stays representable
    s = math.exp(y)
    return p.omega * (1.0 - 2.0 * s) + p.kt * (y - math.log1p(-s))


def analyze_wells(p: ChemParams) -> WellAnalysis:
    """
    Classify f̄ and locate its wells

    Double well iff ω > 2·KT. The lower well μ0 is the root of f̄′ in
    (0, 1/2), found by bisection on y = log s over
    [−ω/KT − log_margin, log(bracket_hi)]; f̄′ is negative at the left end
    for every ω > 2·KT, so the search never fails. μ1 = 1 − μ0 by the
    reflection symmetry of f̄ about 1/2.

    For ω/KT beyond about 745 the root lies below the smallest positive
    double and μ0 is reported as 0.0.

    Returns:
        WellAnalysis with fmin = f̄(μ0) (or f̄(1/2) for a single well)
    """
    if p.omega <= 2.0 * p.kt:
        return WellAnalysis(kind=WellKind.SINGLE, mu0=None, mu1=None, fmin=eval_fbar(p, 0.5))

    cfg = get_config("wells")
    lo = -p.omega / p.kt - cfg["log_margin"]
    hi = math.log(cfg["bracket_hi"])

    # f̄′ < 0 left of the root, > 0 between root and 1/2
    for _ in range(cfg["max_iter"]):
        mid = 0.5 * (lo + hi)
        if hi - lo <= cfg["tol"] or not lo < mid < hi:
            break
        if _dfbar_log(p, mid) < 0.0:
            lo = mid
        else:
            hi = mid

    mu0 = math.exp(0.5 * (lo + hi))
    mu1 = 1.0 - mu0
    fmin = eval_fbar(p, mu0)
    logger.debug(f"Double well: mu0={mu0:.15e}, mu1={mu1:.15f}, fmin={fmin:.15e}")
    return WellAnalysis(kind=WellKind.DOUBLE, mu0=mu0, mu1=mu1, fmin=fmin)


def eval_f(p: ChemParams, w: WellAnalysis, s: ArrayLike) -> ArrayLike:
    """Shifted well function f = f̄ − fmin, clamped to be nonnegative"""
    out = np.maximum(np.asarray(eval_fbar(p, s)) - w.fmin, 0.0)
    return _as_output(out, s)


def well_curvature(p: ChemParams, w: WellAnalysis, radius: float = 0.02, samples: int = 10_000) -> Tuple[float, float]:
    """
    Fitted lower envelope κ with f(s) ≥ κ(s − μi)² for |s − μi| ≤ radius

    Returns:
        (kappa, radius); kappa > 0 certifies super-quadratic wells on the scan
    """
    w.require_double()
    offsets = np.linspace(-radius, radius, samples)
    offsets = offsets[offsets != 0.0]
    kappa = math.inf
    for mu in (w.mu0, w.mu1):
        s = np.clip(mu + offsets, 0.0, 1.0)
        ratio = np.asarray(eval_f(p, w, s)) / (s - mu) ** 2
        kappa = min(kappa, float(np.min(ratio)))
    return kappa, radius


# ============================================================================
# QUADRATURE
# ============================================================================

def adaptive_simpson(func: Callable[[float], float], a: float, b: float,
                     abs_tol: float = None, max_depth: int = None) -> float:
    """
    Adaptive Simpson quadrature with the classic 15·tol acceptance test

    Raises:
        QuadratureError: if any panel needs more than max_depth bisections
    """
    cfg = get_config("quadrature")
    abs_tol = cfg["abs_tol"] if abs_tol is None else abs_tol
    max_depth = cfg["max_depth"] if max_depth is None else max_depth

    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    def refine(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = func(lm), func(rm)
        left = simpson(fa, flm, fm, m - a)
        right = simpson(fm, frm, fb, b - m)
        err = left + right - whole
        if abs(err) <= 15.0 * tol:
            return left + right + err / 15.0
        if depth >= max_depth:
            raise QuadratureError(f"adaptive Simpson exceeded depth {max_depth} on [{a}, {b}]")
        return (refine(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
                + refine(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1))

    if a == b:
        return 0.0
    fa, fm, fb = func(a), func(0.5 * (a + b)), func(b)
    return refine(a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), abs_tol, 0)


def gauss_legendre(func: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                   panels: int = None, nodes: int = None) -> float:
    """Composite Gauss–Legendre rule with a vectorized integrand"""
    cfg = get_config("quadrature")
    panels = cfg["gauss_panels"] if panels is None else panels
    nodes = cfg["gauss_nodes"] if nodes is None else nodes
    x, wts = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    pts = mid[:, None] + half[:, None] * x[None, :]
    return float(np.sum(half[:, None] * wts[None, :] * func(pts)))


# ============================================================================
# GEODESIC DISTANCE
# ============================================================================

def geodesic_distance(p: ChemParams, w: WellAnalysis, s: float, s2: float) -> float:
    """
    Geodesic distance |∫_s^s2 √f(r) dr|

    For a scalar order parameter the monotone path is optimal, so the
    infimum over paths reduces to this integral.

    Raises:
        DomainError: endpoint outside [0, 1]
        QuadratureError: refinement depth exceeded
    """
    _check_domain(np.array([s, s2]))
    lo, hi = (s, s2) if s <= s2 else (s2, s)
    return abs(adaptive_simpson(lambda r: math.sqrt(eval_f(p, w, r)), lo, hi))


def geodesic_distance_gauss(p: ChemParams, w: WellAnalysis, s: float, s2: float) -> float:
    """Same integral by composite Gauss–Legendre; independent cross-check"""
    _check_domain(np.array([s, s2]))
    lo, hi = (s, s2) if s <= s2 else (s2, s)
    return abs(gauss_legendre(lambda r: np.sqrt(eval_f(p, w, r)), lo, hi))


def mm_constant(p: ChemParams, w: WellAnalysis) -> float:
    """Modica–Mortola surface tension 2·d(μ0, μ1)"""
    w.require_double()
    return 2.0 * geodesic_distance(p, w, w.mu0, w.mu1)


__all__ = [
    'ChemParams',
    'WellKind',
    'WellAnalysis',
    'eval_fbar',
    'eval_dfbar',
    'analyze_wells',
    'eval_f',
    'well_curvature',
    'adaptive_simpson',
    'gauss_legendre',
    'geodesic_distance',
    'geodesic_distance_gauss',
    'mm_constant',
]
