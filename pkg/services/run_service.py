"""
Run Service - Run registry, command dispatch and artifacts

Each invocation gets its own directory `<output_dir>/<command>-<timestamp>/`:
- manifest.json: resolved config, tool version, seed, summary, error
- result.csv: `# gammaphase v1 <command>` header, then the command's table
- field.snapshot: for commands that produce a field

Exit statuses: 0 success, 2 invalid input, 3 solver failure,
4 geometry/range/compatibility failure.
"""
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Type
import json
import logging
import math

import numpy as np
from pydantic import BaseModel, ValidationError

from config.settings import settings
from core.construct import (
    WellMode,
    build_profile,
    detect_laminate,
    profile_center_shift,
    recovery_pair,
)
from core.errors import (
    CheckFailed,
    ConfigError,
    DomainError,
    GeometryError,
    IncompatibleMisfit,
    NonConvergence,
    ParameterError,
    QuadratureError,
    RangeError,
)
from core.field import FieldPair, Grid, read_snapshot, write_snapshot
from core.solver import minimize, random_init
from core.tensor import (
    compatibility,
    inverse_transform_misfit,
    nearest_connection,
    normalize_misfit,
    transform_misfit,
)
from core.wellmodel import analyze_wells, geodesic_distance_gauss, mm_constant, well_curvature
from schemas.results import (
    AnisotropyRow,
    CellRow,
    CompactnessRow,
    CompatRow,
    MassRow,
    MinimizeRow,
    ProfileRow,
    WellsRow,
    table,
)
from schemas.run_config import Command, LaminateConfig, RunConfig, parse_config
from services.experiment_service import ExperimentService
from utils.io_helpers import write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_GEOMETRY = 4

_EXIT_CODES = (
    ((ValidationError, ConfigError, ParameterError, DomainError), EXIT_INVALID),
    ((NonConvergence, QuadratureError, CheckFailed), EXIT_SOLVER),
    ((GeometryError, RangeError, IncompatibleMisfit), EXIT_GEOMETRY),
)


def exit_code_for(exc: BaseException) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(exc, types):
            return code
    return EXIT_INTERNAL


@dataclass
class CommandResult:
    """What a command hands back to the registry"""
    row_model: Type[BaseModel]
    rows: List[BaseModel]
    summary: Dict[str, Any] = field(default_factory=dict)
    snapshot: Optional[FieldPair] = None
    check: Optional[Callable[[], None]] = None  # runs after the artifacts are written


def _float(x) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


class RunService:
    """Creates run directories and executes one command per call"""

    def __init__(self, output_dir: Optional[str] = None, threads: Optional[int] = None):
        self.output_dir = output_dir
        self.threads = threads or settings.GAMMAPHASE_THREADS
        self._commands: Dict[Command, Callable[[RunConfig], CommandResult]] = {
            Command.WELLS: self._wells,
            Command.COMPAT: self._compat,
            Command.PROFILE: self._profile,
            Command.MINIMIZE: self._minimize,
            Command.CELL: self._cell,
            Command.ANISOTROPY: self._anisotropy,
            Command.MASS_SWEEP: self._mass_sweep,
            Command.COMPACTNESS: self._compactness,
        }

    # ------------------------------------------------------------------
    # registry
    # ------------------------------------------------------------------

    def create_run_dir(self, command: str, root: Optional[str] = None) -> Path:
        """`<root>/<command>-<UTC timestamp>/`; a numeric suffix avoids collisions"""
        root = Path(self.output_dir or root or settings.OUTPUT_DIR)
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        run_dir = root / f"{command}-{stamp}"
        k = 1
        while run_dir.exists():
            run_dir = root / f"{command}-{stamp}-{k}"
            k += 1
        run_dir.mkdir(parents=True)
        return run_dir

    def _manifest(self, command: str, cfg: Optional[RunConfig], seed: Optional[int]) -> Dict[str, Any]:
        return {
            "tool": "gammaphase",
            "version": settings.APP_VERSION,
            "command": command,
            "created": datetime.now(timezone.utc).isoformat(),
            "seed": seed,
            "threads": self.threads,
            "config": cfg.manifest_echo() if cfg is not None else None,
            "artifacts": [],
            "summary": {},
            "error": None,
        }

    def execute(self, text: str, command: Optional[str] = None, seed: Optional[int] = None) -> Tuple[int, Path]:
        """
        Parse a run document and run it

        Returns:
            (exit status, run directory)
        """
        try:
            cfg = parse_config(text, command)
        except (ValidationError, ConfigError) as e:
            name = command or _peek_command(text)
            run_dir = self.create_run_dir(name)
            manifest = self._manifest(name, None, seed)
            manifest["error"] = _error_record(e, EXIT_INVALID)
            write_json(run_dir / "manifest.json", manifest)
            logger.error(f"Invalid run document: {e}")
            return EXIT_INVALID, run_dir
        return self.run(cfg, seed=seed)

    def run(self, cfg: RunConfig, seed: Optional[int] = None) -> Tuple[int, Path]:
        if seed is not None:
            cfg = cfg.model_copy(update={"solve": cfg.solve.model_copy(update={"seed": seed})})
        run_dir = self.create_run_dir(cfg.command.value, cfg.output_dir)
        manifest = self._manifest(cfg.command.value, cfg, cfg.solve.seed)
        logger.info(f"Run {cfg.command.value} -> {run_dir}")

        status = EXIT_OK
        try:
            result = self._commands[cfg.command](cfg)
            columns, values = table(result.row_model, result.rows)
            write_csv(run_dir / "result.csv", cfg.command.value, columns, values)
            manifest["artifacts"].append("result.csv")
            if result.snapshot is not None:
                write_snapshot(result.snapshot, run_dir / "field.snapshot")
                manifest["artifacts"].append("field.snapshot")
            manifest["summary"] = result.summary
            if result.check is not None:
                result.check()
        except Exception as e:
            status = exit_code_for(e)
            logger.error(f"{cfg.command.value} failed with exit status {status}", exc_info=True)
            manifest["error"] = _error_record(e, status)
        finally:
            write_json(run_dir / "manifest.json", manifest)
        return status, run_dir

    # ------------------------------------------------------------------
    # commands
    # ------------------------------------------------------------------

    def _experiments(self, cfg: RunConfig) -> ExperimentService:
        return ExperimentService(threads=self.threads, solve=cfg.solve)

    def _wells(self, cfg: RunConfig) -> CommandResult:
        p = cfg.material.chem()
        w = analyze_wells(p)
        summary: Dict[str, Any] = {"kind": w.kind.value}
        mm = None
        if w.is_double:
            mm = mm_constant(p, w)
            kappa, radius = well_curvature(p, w)
            summary.update({
                "mm_constant_gauss": 2.0 * geodesic_distance_gauss(p, w, w.mu0, w.mu1),
                "well_curvature": kappa,
                "well_curvature_radius": radius,
            })
        row = WellsRow(kind=w.kind.value, mu0=w.mu0, mu1=w.mu1, fmin=w.fmin, mm_constant=mm)
        return CommandResult(WellsRow, [row], summary)

    def _compat(self, cfg: RunConfig) -> CommandResult:
        w = analyze_wells(cfg.material.chem())
        e0 = cfg.material.misfit()
        conns = compatibility(e0, w)
        rows = [CompatRow(s=c.s, nu_angle=c.angle, a1=c.a[0], a2=c.a[1], residual=c.residual) for c in conns]
        summary: Dict[str, Any] = {"det_e0": e0.det, "connections": len(conns),
                                   "exact": [c.is_exact for c in conns]}
        if e0.det < 0.0:
            maps = normalize_misfit(e0, cfg.material.stiffness.build())
            normalized = transform_misfit(maps, e0.matrix)
            back = inverse_transform_misfit(maps, normalized)
            summary["normalization"] = {
                "rbar": maps.rbar.tolist(),
                "dscale": maps.dscale.tolist(),
                "qbar": maps.qbar.tolist(),
                "jacobian_q": maps.jacobian_q,
                "jacobian_scale": maps.jacobian_scale,
                "normalized_e0": normalized.tolist(),
                "round_trip_residual": float(np.max(np.abs(back - e0.matrix))),
                "ctilde": maps.ctilde.matrix.tolist() if maps.ctilde is not None else None,
            }
        return CommandResult(CompatRow, rows, summary)

    def _profile(self, cfg: RunConfig) -> CommandResult:
        params = cfg.material.params()
        spec = build_profile(params.wells, params.chem, params.epsilon, WellMode.CHEM_ONLY)
        rows = [ProfileRow(s=s, phi=phi) for s, phi in zip(spec.s_table, spec.phi_table)]
        summary = {
            "epsilon": params.epsilon,
            "phi_max": spec.phi_max,
            "sqrt_epsilon": math.sqrt(params.epsilon),
            "center_shift": profile_center_shift(spec),
        }
        return CommandResult(ProfileRow, rows, summary)

    def _initial_fields(self, cfg: RunConfig, grid: Grid, params) -> FieldPair:
        w, e0 = params.wells, params.misfit
        init = cfg.campaign.init
        if init == "random":
            return random_init(grid, params, cfg.solve.seed)
        if init == "ground":
            w.require_double()
            c = np.full((grid.nx, grid.ny), w.mu0)
            return FieldPair(c=c, u=w.mu0 * (grid.points() @ e0.matrix.T), grid=grid)
        lam = (cfg.laminate or LaminateConfig()).build(grid)
        lam.validate(compatibility(e0, w))
        conn = nearest_connection(e0, w, lam.normal)
        spec = build_profile(w, params.chem, params.epsilon, WellMode.CHEM_ONLY)
        return recovery_pair(lam, conn, spec, grid, w, e0, shift=profile_center_shift(spec))

    def _restart_fields(self, cfg: RunConfig) -> FieldPair:
        """Fields of a previous run; the grid comes from the snapshot and must match cfg.grid if given"""
        try:
            init = read_snapshot(Path(cfg.campaign.snapshot))
        except OSError as e:
            raise ParameterError(f"cannot read snapshot {cfg.campaign.snapshot}: {e}") from e
        if cfg.grid is not None and cfg.grid.build() != init.grid:
            raise ParameterError(f"snapshot grid {init.grid.nx}x{init.grid.ny} does not match the configured grid "
                                 f"{cfg.grid.nx}x{cfg.grid.ny}")
        logger.info(f"Restarting from {cfg.campaign.snapshot} ({init.grid.nx}x{init.grid.ny})")
        return init

    def _minimize(self, cfg: RunConfig) -> CommandResult:
        params = cfg.material.params()
        if cfg.campaign.init == "snapshot":
            init = self._restart_fields(cfg)
        else:
            init = self._initial_fields(cfg, cfg.grid.build(), params)
        report = minimize(init, params, cfg.solve)
        rows = [MinimizeRow(iteration=k, energy=e, mean_c=m)
                for k, (e, m) in enumerate(zip(report.energy_trace, report.mean_trace))]
        summary: Dict[str, Any] = {
            "iterations": report.iterations,
            "converged": report.converged,
            "energy": report.breakdown.as_dict(),
        }
        if params.misfit.det <= 0.0:
            found = detect_laminate(report.final, params.wells, compatibility(params.misfit, params.wells))
            summary["laminate"] = {
                "normal": found.normal.tolist() if found.normal is not None else None,
                "admissible": found.admissible,
                "coherence": found.coherence,
                "interface_length": found.interface_length,
            }
        return CommandResult(MinimizeRow, rows, summary, snapshot=report.final)

    def _cell(self, cfg: RunConfig) -> CommandResult:
        params = cfg.material.params()
        camp = cfg.campaign
        service = self._experiments(cfg)
        est = service.cell_problem(camp.normal, params, cfg.material.eps_list, camp.width, camp.height)
        angle = math.atan2(est.nu[1], est.nu[0]) % math.pi
        rows = [CellRow(nu_angle=angle, eps=eps, energy=e, valid=ok, k_hat=est.k_hat, fit_residual=est.fit_residual)
                for eps, e, ok in zip(est.eps_list, est.energies, est.valid)]
        mm = mm_constant(params.chem, params.wells)
        summary: Dict[str, Any] = {
            "k_hat": _float(est.k_hat),
            "slope": _float(est.slope),
            "fit_residual": _float(est.fit_residual),
            "mm_constant": mm,
            "k_hat_relative_error": _float(abs(est.k_hat - mm) / mm),
            "jump_residual": est.residual_jump,
        }
        if camp.heights is not None:
            report = service.height_independence_check(camp.normal, params, est.eps_list[-1],
                                                       heights=camp.heights, width=camp.width)
            summary["height_check"] = {
                "heights": list(report.heights),
                "energies": list(report.energies),
                "ratio": report.ratio,
                "far_band_fraction": report.far_band_fraction,
            }
        return CommandResult(CellRow, rows, summary)

    def _anisotropy(self, cfg: RunConfig) -> CommandResult:
        params = cfg.material.params()
        report = self._experiments(cfg).anisotropy_probe(cfg.campaign.normal, params, cfg.material.eps_list,
                                                         strict=False)
        angle = math.atan2(report.nu[1], report.nu[0]) % math.pi
        rows = [AnisotropyRow(nu_angle=angle, eps=eps, energy=e, compatible=report.compatible,
                              strictly_increasing=report.strictly_increasing, delta_min=report.delta_min)
                for eps, e in zip(report.eps_list, report.energies)]
        summary = {"compatible": report.compatible, "strictly_increasing": report.strictly_increasing,
                   "delta_min": _float(report.delta_min)}
        return CommandResult(AnisotropyRow, rows, summary, check=report.check)

    def _mass_sweep(self, cfg: RunConfig) -> CommandResult:
        params = cfg.material.params()
        lam = cfg.laminate.build() if cfg.laminate is not None else None
        entries = self._experiments(cfg).mass_sweep(lam, params, params.epsilon, cfg.campaign.m_list)
        rows = [MassRow(m=e.m, mean=e.mean, mean_error=e.mean_error, energy=e.energy,
                        sharp_prediction=e.sharp_prediction, offset=e.offset, measured_offset=e.measured_offset,
                        shift=e.shift, eta=e.eta, converged=e.converged, error=e.error or "")
                for e in entries]
        errors = [e.mean_error for e in entries if e.error is None]
        summary = {"max_mean_error": _float(max(errors)) if errors else None,
                   "failed": sum(1 for e in entries if e.error is not None)}
        return CommandResult(MassRow, rows, summary)

    def _compactness(self, cfg: RunConfig) -> CommandResult:
        params = cfg.material.params()
        camp = cfg.campaign
        report = self._experiments(cfg).compactness_probe(params, camp.eps_pair, cfg.solve.seed, cfg.solve.mass,
                                                          camp.width, camp.height, strict=False)
        rows = [CompactnessRow(eps=e.epsilon, energy=e.energy, mismatch_sq=e.mismatch_sq,
                               well_fraction=e.well_fraction, interface_length=e.interface_length,
                               converged=e.converged)
                for e in report.entries]
        summary = {"mismatch_ratio": _float(report.mismatch_ratio),
                   "mismatch_decreasing": report.mismatch_decreasing,
                   "well_fraction_ok": report.well_fraction_ok}
        return CommandResult(CompactnessRow, rows, summary, snapshot=report.entries[-1].final, check=report.check)


def _peek_command(text: str) -> str:
    try:
        value = json.loads(text).get("command")
    except (json.JSONDecodeError, AttributeError):
        return "invalid"
    return value if isinstance(value, str) and value.replace("-", "").isalnum() else "invalid"


def _error_record(exc: BaseException, status: int) -> Dict[str, Any]:
    record: Dict[str, Any] = {"type": type(exc).__name__, "message": str(exc), "exit_status": status}
    if isinstance(exc, ValidationError):
        record["details"] = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]} for err in exc.errors()
        ]
    if isinstance(exc, NonConvergence):
        record["residual"] = _float(exc.residual)
        if exc.partial is not None:
            record["partial"] = {"iterations": exc.partial.iterations, "energy_trace": exc.partial.energy_trace}
    return record


__all__ = ['RunService', 'CommandResult', 'exit_code_for', 'EXIT_OK', 'EXIT_INTERNAL', 'EXIT_INVALID', 'EXIT_SOLVER', 'EXIT_GEOMETRY']
