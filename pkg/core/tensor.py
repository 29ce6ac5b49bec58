"""
Tensor Algebra - Stiffness, Misfit and Rank-One Compatibility

Components:
- Stiffness: ℂ on 2×2 symmetric matrices as a 3×3 matrix in the orthonormal
  basis {e_x⊗e_x, e_y⊗e_y, (e_x⊗e_y + e_y⊗e_x)/√2}
- Misfit: the lattice misfit e0, stored as (e11, e12, e22)
- compatibility(): skew S and jump a⊗ν with (μ1−μ0)e0 + S = a⊗ν
- normalize_misfit(): orthogonal/diagonal change of variables taking e0 to
  [[0, 1], [1, 0]]
- skew_normalize(): removal of the skew-affine gauge from a displacement

The √2 on the shear slot makes the 3×3 matrix similar (not only congruent)
to the tensor action, so its eigenvalues are the coercivity constants.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple
import logging
import math

import numpy as np

from config.solver_config import get_config
from core.errors import IncompatibleMisfit, ParameterError
from core.wellmodel import WellAnalysis

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
NORMALIZED_E0 = np.array([[0.0, 1.0], [1.0, 0.0]])


# ============================================================================
# VOIGT-STYLE BASIS
# ============================================================================

def to_voigt(xi: np.ndarray) -> np.ndarray:
    """Symmetric part of (..., 2, 2) matrices as (..., 3) coordinate vectors"""
    xi = np.asarray(xi, dtype=float)
    off = 0.5 * (xi[..., 0, 1] + xi[..., 1, 0])
    return np.stack([xi[..., 0, 0], xi[..., 1, 1], SQRT2 * off], axis=-1)


def from_voigt(v: np.ndarray) -> np.ndarray:
    """Inverse of to_voigt on symmetric matrices"""
    v = np.asarray(v, dtype=float)
    off = v[..., 2] / SQRT2
    row0 = np.stack([v[..., 0], off], axis=-1)
    row1 = np.stack([off, v[..., 1]], axis=-1)
    return np.stack([row0, row1], axis=-2)


def sym(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return 0.5 * (xi + np.swapaxes(xi, -1, -2))


# ============================================================================
# STIFFNESS
# ============================================================================

@dataclass(frozen=True)
class Stiffness:
    """Symmetric positive definite 3×3 representation of ℂ"""
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ParameterError(f"stiffness must be 3x3, got shape {m.shape}")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, np.max(np.abs(m)))):
            raise ParameterError("stiffness matrix must be symmetric")
        m = 0.5 * (m + m.T)
        if np.min(np.linalg.eigvalsh(m)) <= 0.0:
            raise ParameterError("stiffness matrix must be positive definite")
        object.__setattr__(self, "matrix", m)

    @property
    def coercivity(self) -> float:
        """Smallest eigenvalue c0 with ℂ(ξ):ξ ≥ c0‖sym ξ‖²"""
        return float(np.min(np.linalg.eigvalsh(self.matrix)))

    def apply(self, xi: np.ndarray) -> np.ndarray:
        """ℂ(sym ξ) as (..., 2, 2) matrices"""
        return from_voigt(to_voigt(xi) @ self.matrix)


def isotropic_stiffness(lam: float, mu: float) -> Stiffness:
    """
    ℂ(ξ) = 2μξ + λ·tr(ξ)I

    Raises:
        ParameterError: unless mu > 0 and lam + mu > 0
    """
    if not (mu > 0.0 and lam + mu > 0.0):
        raise ParameterError(f"isotropic stiffness needs mu > 0 and lambda + mu > 0 (lambda={lam}, mu={mu})")
    m = np.array([
        [2.0 * mu + lam, lam, 0.0],
        [lam, 2.0 * mu + lam, 0.0],
        [0.0, 0.0, 2.0 * mu],
    ])
    return Stiffness(matrix=m)


def quad_form(C: Stiffness, xi: np.ndarray) -> np.ndarray:
    """ℂ(sym ξ):sym ξ; skew input gives 0. Batched over leading axes."""
    v = to_voigt(xi)
    out = np.einsum("...i,ij,...j->...", v, C.matrix, v)
    return float(out) if np.ndim(out) == 0 else out


# ============================================================================
# MISFIT
# ============================================================================

@dataclass(frozen=True)
class Misfit:
    """Lattice misfit e0 = [[e11, e12], [e12, e22]]"""
    e11: float
    e12: float
    e22: float

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Misfit":
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2) or m[0, 1] != m[1, 0]:
            raise ParameterError("misfit must be a symmetric 2x2 matrix")
        return cls(e11=float(m[0, 0]), e12=float(m[0, 1]), e22=float(m[1, 1]))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.e11, self.e12], [self.e12, self.e22]])

    @property
    def det(self) -> float:
        return self.e11 * self.e22 - self.e12 * self.e12


def skew_matrix(s: float) -> np.ndarray:
    """S = [[0, s], [−s, 0]]"""
    return np.array([[0.0, s], [-s, 0.0]])


# ============================================================================
# RANK-ONE COMPATIBILITY
# ============================================================================

@dataclass(frozen=True)
class RankOneConnection:
    """
    Compatible jump across a planar interface

    (μ1 − μ0)·e0 + S = a⊗ν with S = [[0, s], [−s, 0]]. `residual` is the
    Frobenius norm of the mismatch: round-off for exact connections, positive
    for best-fit jumps along incompatible normals.
    """
    s: float
    nu: np.ndarray
    a: np.ndarray
    delta: float
    residual: float = 0.0

    @property
    def angle(self) -> float:
        """Angle of ν in [0, π)"""
        return math.atan2(self.nu[1], self.nu[0]) % math.pi

    @property
    def is_exact(self) -> bool:
        return self.residual <= 1e-12


def canonical_normal(nu: np.ndarray, a: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Representative of ±ν with angle in [0, π); ties at π go to 0

    Flipping ν flips a as well, so a⊗ν is unchanged.
    """
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.linalg.norm(nu)
    flip = nu[1] < 0.0 or (nu[1] == 0.0 and nu[0] < 0.0)
    if flip:
        nu = -nu
        if a is not None:
            a = -np.asarray(a, dtype=float)
    return nu, a


def _connection_residual(e0: Misfit, delta: float, s: float, a: np.ndarray, nu: np.ndarray) -> float:
    return float(np.linalg.norm(delta * e0.matrix + skew_matrix(s) - np.outer(a, nu)))


def compatibility(e0: Misfit, w: WellAnalysis) -> List[RankOneConnection]:
    """
    All rank-one connections between the wells, ordered by normal angle

    det(δe0 + S) = δ²det(e0) + s², so s = ±δ·√(−det e0): two connections
    when det(e0) < 0, one when det(e0) = 0 (within tolerance).

    Raises:
        IncompatibleMisfit: if det(e0) > tolerance
    """
    w.require_double()
    tol = get_config("tensor")["det_tol"]
    det = e0.det
    if det > tol:
        raise IncompatibleMisfit(f"det(e0) = {det:.3e} > 0: no rank-one connection between the wells")

    delta = w.delta
    if abs(det) <= tol:
        candidates = [0.0]
    else:
        root = delta * math.sqrt(-det)
        candidates = [root, -root]

    connections = []
    for s in candidates:
        m = delta * e0.matrix + skew_matrix(s)
        norms = np.linalg.norm(m, axis=1)
        if norms.max() == 0.0:
            # e0 = 0: every normal is admissible, report e_x with zero jump
            nu, a = np.array([1.0, 0.0]), np.zeros(2)
        else:
            row = m[int(np.argmax(norms))]
            nu = row / np.linalg.norm(row)
            a = m @ nu
        nu, a = canonical_normal(nu, a)
        residual = _connection_residual(e0, delta, s, a, nu)
        connections.append(RankOneConnection(s=float(s), nu=nu, a=a, delta=delta, residual=residual))

    connections.sort(key=lambda c: c.angle)
    logger.debug(f"compatibility: {len(connections)} connection(s), angles={[round(c.angle, 6) for c in connections]}")
    return connections


def nearest_connection(e0: Misfit, w: WellAnalysis, nu: np.ndarray) -> RankOneConnection:
    """
    Best jump a along a prescribed normal: a minimizes ‖sym(a⊗ν) − δe0‖

    With τ = ν rotated by +90°: a = δ(ν·e0ν)ν + 2δ(τ·e0ν)τ. Exact (residual
    ~ 0) when ν is compatible.
    """
    w.require_double()
    nu, _ = canonical_normal(nu)
    tau = np.array([-nu[1], nu[0]])
    delta = w.delta
    e0nu = e0.matrix @ nu
    a = delta * float(nu @ e0nu) * nu + 2.0 * delta * float(tau @ e0nu) * tau
    jump = np.outer(a, nu)
    s = 0.5 * (jump[0, 1] - jump[1, 0])
    residual = _connection_residual(e0, delta, s, a, nu)
    return RankOneConnection(s=float(s), nu=nu, a=a, delta=delta, residual=residual)


def is_admissible(nu: np.ndarray, connections: List[RankOneConnection], tol: float = 1e-9) -> bool:
    """Whether ±ν is one of the compatible normals"""
    nu, _ = canonical_normal(nu)
    return any(abs(float(nu @ c.nu)) >= 1.0 - tol for c in connections)


# ============================================================================
# CHANGE OF VARIABLES
# ============================================================================

@dataclass(frozen=True)
class NormalizationMaps:
    """
    Maps with Q̄ᵀD⁻¹R̄ᵀ·e0·R̄D⁻¹Q̄ = [[0, 1], [1, 0]]

    jacobian_q = det(Q̄ᵀ) and jacobian_scale = det(D⁻¹) are recorded; the
    energy constant is reported both raw and rescaled by them.
    """
    rbar: np.ndarray
    dscale: np.ndarray
    qbar: np.ndarray
    ctilde: Optional[Stiffness] = None
    jacobian_q: float = 1.0
    jacobian_scale: float = 1.0


def _voigt_conjugation(q: np.ndarray) -> np.ndarray:
    """3×3 matrix of v ↦ Q v Qᵀ on symmetric matrices"""
    basis = np.eye(3)
    cols = [to_voigt(q @ from_voigt(b) @ q.T) for b in basis]
    return np.stack(cols, axis=1)


def transformed_stiffness(C: Stiffness, qbar: np.ndarray) -> Stiffness:
    """ℂ̃(v):w = ℂ(Q̄vQ̄ᵀ):(Q̄wQ̄ᵀ)"""
    t = _voigt_conjugation(qbar)
    return Stiffness(matrix=t.T @ C.matrix @ t)


def normalize_misfit(e0: Misfit, C: Optional[Stiffness] = None) -> NormalizationMaps:
    """
    Change of variables taking e0 to [[0, 1], [1, 0]]

    R̄ diagonalizes e0 (eigenvalues λ1 < 0 < λ2), D = diag(√|λ1|, √|λ2|)
    scales to diag(−1, 1), and Q̄ (rotation by π/4) takes diag(−1, 1) to the
    normalized misfit.

    Raises:
        IncompatibleMisfit: if det(e0) >= 0
    """
    if e0.det >= 0.0:
        raise IncompatibleMisfit(f"normalization needs det(e0) < 0, got {e0.det:.3e}")

    tol = get_config("tensor")["normalized_tol"]
    if np.max(np.abs(e0.matrix - NORMALIZED_E0)) <= tol:
        eye = np.eye(2)
        ctilde = C if C is not None else None
        return NormalizationMaps(rbar=eye, dscale=eye.copy(), qbar=eye.copy(), ctilde=ctilde)

    evals, evecs = np.linalg.eigh(e0.matrix)
    v = evecs[:, 0]
    if v[np.argmax(np.abs(v) > 1e-15)] < 0.0:
        v = -v
    rbar = np.column_stack([v, [-v[1], v[0]]])
    dscale = np.diag(np.sqrt(np.abs(evals)))

    c = 1.0 / SQRT2
    qbar = np.array([[c, -c], [c, c]])

    ctilde = transformed_stiffness(C, qbar) if C is not None else None
    return NormalizationMaps(
        rbar=rbar,
        dscale=dscale,
        qbar=qbar,
        ctilde=ctilde,
        jacobian_q=float(np.linalg.det(qbar.T)),
        jacobian_scale=float(1.0 / np.linalg.det(dscale)),
    )


def transform_misfit(maps: NormalizationMaps, e0: np.ndarray) -> np.ndarray:
    """Q̄ᵀD⁻¹R̄ᵀ·e0·R̄D⁻¹Q̄"""
    dinv = np.linalg.inv(maps.dscale)
    left = maps.qbar.T @ dinv @ maps.rbar.T
    return left @ np.asarray(e0, dtype=float) @ left.T


def inverse_transform_misfit(maps: NormalizationMaps, e0t: np.ndarray) -> np.ndarray:
    """Undo transform_misfit"""
    left = maps.rbar @ maps.dscale @ maps.qbar
    return left @ np.asarray(e0t, dtype=float) @ left.T


# ============================================================================
# SKEW-AFFINE GAUGE
# ============================================================================

def skew_normalize(u: np.ndarray, grid) -> np.ndarray:
    """
    Remove the skew-affine part of a displacement

    v(z) = u(z) − R_φ̄·z − ā where φ̄ is the mean skew part of the discrete
    gradient and ā makes the nodal mean zero. Idempotent.
    """
    from core.field import cell_gradient

    grad = cell_gradient(u, grid)
    phi = float(np.mean(0.5 * (grad[..., 1, 0] - grad[..., 0, 1])))
    x, y = grid.coordinates()
    v = np.array(u, dtype=float, copy=True)
    v[..., 0] += phi * y
    v[..., 1] -= phi * x
    v -= v.reshape(-1, 2).mean(axis=0)
    return v


__all__ = [
    'to_voigt',
    'from_voigt',
    'sym',
    'Stiffness',
    'isotropic_stiffness',
    'quad_form',
    'Misfit',
    'skew_matrix',
    'RankOneConnection',
    'canonical_normal',
    'compatibility',
    'nearest_connection',
    'is_admissible',
    'NormalizationMaps',
    'transformed_stiffness',
    'normalize_misfit',
    'transform_misfit',
    'inverse_transform_misfit',
    'skew_normalize',
    'NORMALIZED_E0',
]
