"""
Solver Configuration - Tunable Numerical Parameters

All tolerances, caps and discretization rules used by the numerical kernel.
Adjust these to trade accuracy against runtime.

Limitations:
- Values are read once at import time
- Only the knobs users actually tune have env overrides
"""

import os

SOLVER_CONFIG = {
    # Well location by bisection on the derivative of the chemical potential,
    # carried out in log s so that wells below 1e-12 are still found
    "wells": {
        "log_margin": 2.0,     # left end of the log bracket is -omega/kt - log_margin
        "bracket_hi": 0.5 - 1e-12,
        "tol": 1e-14,
        "max_iter": 200,
        "domain_tol": 1e-14,  # slack allowed outside [0, 1]
    },

    # Adaptive Simpson for the geodesic distance
    "quadrature": {
        "abs_tol": float(os.getenv("GAMMAPHASE_QUAD_TOL", "1e-10")),
        "max_depth": 40,
        "gauss_nodes": 8,      # per panel, composite Gauss-Legendre cross-check
        "gauss_panels": 256,
    },

    # Tabulated 1-D optimal profile
    "profile": {
        "table_size": 4096,
        "panel_nodes": 4,      # Gauss-Legendre nodes per table interval
        "separation_factor": 4.0,  # interfaces must be >= factor * sqrt(eps) apart
    },

    # Compatibility algebra
    "tensor": {
        "det_tol": 1e-12,
        "normalized_tol": 1e-14,
    },

    # Alternating minimization
    "solver": {
        "max_outer": int(os.getenv("GAMMAPHASE_MAX_OUTER", "400")),
        "tol_rel": 1e-10,
        "cg_tol": 1e-10,
        "cg_max": int(os.getenv("GAMMAPHASE_CG_MAX", "20000")),
        "max_halvings": 30,
        "stationary_tol": 1e-10,
        "clamp": 1e-13,        # c kept inside [clamp, 1 - clamp] before log terms
        "mass_tol": 1e-13,
        "mass_max_iter": 60,
        "step_scale": 0.1,     # default step0 = step_scale * h^2 / eps
        "max_step_factor": 16.0,  # accepted steps may grow up to this multiple of step0
        "seed": 42,
    },

    # Campaign harness
    "experiment": {
        "cells_per_eps": int(os.getenv("GAMMAPHASE_CELLS_PER_EPS", "8")),
        "min_fit_points": 3,
        "well_band": 0.05,
        "well_fraction_min": 0.9,  # compactness: share of nodes within well_band at the smaller eps
    },
}


def get_config(section: str = None):
    """
    Get config section or full config

    Args:
        section: Config section name (e.g., 'solver', 'profile')
                If None, returns full config

    Returns:
        Dict with config values
    """
    if section:
        return SOLVER_CONFIG.get(section, {})
    return SOLVER_CONFIG


__all__ = ['SOLVER_CONFIG', 'get_config']
