"""Run document schema: one JSON file per CLI invocation"""
from enum import Enum
from typing import List, Literal, Optional, Tuple
import json
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config.settings import settings
from core.construct import Laminate
from core.errors import ConfigError
from core.field import Grid, MaterialParams
from core.solver import SolveConfig
from core.tensor import Misfit, Stiffness, isotropic_stiffness
from core.wellmodel import ChemParams


class Command(str, Enum):
    WELLS = "wells"
    COMPAT = "compat"
    PROFILE = "profile"
    MINIMIZE = "minimize"
    CELL = "cell"
    ANISOTROPY = "anisotropy"
    MASS_SWEEP = "mass-sweep"
    COMPACTNESS = "compactness"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, populate_by_name=True)


def _check_decreasing(values: Optional[List[float]], name: str) -> Optional[List[float]]:
    if values is None:
        return values
    if any(v <= 0.0 for v in values):
        raise ValueError(f"{name} entries must be positive")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} must be strictly decreasing")
    return values


class StiffnessConfig(_Strict):
    lam: float = Field(1.0, alias="lambda", description="First Lamé parameter")
    mu: float = Field(1.0, description="Shear modulus")
    matrix: Optional[List[List[float]]] = Field(None, description="Full 3x3 matrix in the (xx, yy, √2·xy) basis")

    @field_validator("matrix")
    @classmethod
    def _square(cls, v):
        if v is not None and (len(v) != 3 or any(len(row) != 3 for row in v)):
            raise ValueError("stiffness matrix must be 3x3")
        return v

    def build(self) -> Stiffness:
        if self.matrix is not None:
            return Stiffness(matrix=np.array(self.matrix, dtype=float))
        return isotropic_stiffness(self.lam, self.mu)


class MaterialConfig(_Strict):
    omega: float = Field(..., description="Enthalpy of mixing")
    kt: float = Field(..., description="Thermal energy KT")
    e0: List[float] = Field([0.0, 1.0, 0.0], description="Misfit as [e11, e12, e22] or row-major [e11, e12, e21, e22]")
    stiffness: StiffnessConfig = Field(default_factory=StiffnessConfig)
    epsilon: Optional[float] = Field(None, gt=0.0, description="Interface width parameter")
    eps_list: Optional[List[float]] = Field(None, description="Strictly decreasing ε sweep")

    @field_validator("e0")
    @classmethod
    def _symmetric(cls, v):
        if len(v) == 4:
            if v[1] != v[2]:
                raise ValueError(f"e0 must be symmetric, got off-diagonals {v[1]} and {v[2]}")
            return [v[0], v[1], v[3]]
        if len(v) != 3:
            raise ValueError(f"e0 needs 3 or 4 numbers, got {len(v)}")
        return v

    @field_validator("eps_list")
    @classmethod
    def _eps_sorted(cls, v):
        return _check_decreasing(v, "eps_list")

    def chem(self) -> ChemParams:
        return ChemParams(omega=self.omega, kt=self.kt)

    def misfit(self) -> Misfit:
        e11, e12, e22 = self.e0
        return Misfit(e11=e11, e12=e12, e22=e22)

    def params(self, epsilon: Optional[float] = None) -> MaterialParams:
        eps = epsilon if epsilon is not None else (self.epsilon or (self.eps_list or [1.0])[0])
        return MaterialParams.build(self.chem(), self.stiffness.build(), self.misfit(), eps)


class GridConfig(_Strict):
    nx: int = Field(..., ge=2)
    ny: int = Field(..., ge=2)
    lx: float = Field(1.0, gt=0.0)
    ly: float = Field(1.0, gt=0.0)
    origin: Optional[Tuple[float, float]] = Field(None, description="Lower-left corner; centered box by default")

    def build(self) -> Grid:
        origin = self.origin if self.origin is not None else (-0.5 * self.lx, -0.5 * self.ly)
        return Grid(nx=self.nx, ny=self.ny, lx=self.lx, ly=self.ly, origin=origin)


class LaminateConfig(_Strict):
    angle: float = Field(math.pi / 2, description="Normal angle in radians; π/2 is e_y")
    offsets: List[float] = Field(default_factory=lambda: [0.0])
    phase0: Literal["mu0", "mu1"] = "mu0"
    domain: Optional[Tuple[float, float, float, float]] = Field(None, description="x0, x1, y0, y1")

    @field_validator("offsets")
    @classmethod
    def _increasing(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("offsets must be strictly increasing")
        return v

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.angle), math.sin(self.angle)])

    def build(self, grid: Optional[Grid] = None) -> Laminate:
        domain = self.domain
        if domain is None:
            if grid is None:
                domain = (-0.5, 0.5, -0.5, 0.5)
            else:
                domain = (grid.origin[0], grid.origin[0] + grid.lx, grid.origin[1], grid.origin[1] + grid.ly)
        return Laminate.from_angle(self.angle, self.offsets, 0 if self.phase0 == "mu0" else 1, domain)


class CampaignConfig(_Strict):
    """Knobs of the campaign commands"""
    normal_angle: float = Field(math.pi / 2, description="Probed normal for cell/anisotropy")
    width: float = Field(1.0, gt=0.0)
    height: float = Field(1.0, gt=0.0)
    heights: Optional[Tuple[float, float]] = Field(None, description="Run the height check with these two heights")
    m_list: Optional[List[float]] = None
    eps_pair: Optional[Tuple[float, float]] = None
    init: Literal["random", "recovery", "ground", "snapshot"] = "random"
    snapshot: Optional[str] = Field(None, description="Field snapshot to restart from when init is 'snapshot'")

    @field_validator("m_list")
    @classmethod
    def _means(cls, v):
        if v is not None and any(not 0.0 <= m <= 1.0 for m in v):
            raise ValueError("every m must lie in [0, 1]")
        return v

    @field_validator("eps_pair")
    @classmethod
    def _pair(cls, v):
        if v is not None:
            _check_decreasing(list(v), "eps_pair")
        return v

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.normal_angle), math.sin(self.normal_angle)])


class RunConfig(_Strict):
    command: Command
    material: MaterialConfig
    grid: Optional[GridConfig] = None
    laminate: Optional[LaminateConfig] = None
    solve: SolveConfig = Field(default_factory=SolveConfig)
    campaign: CampaignConfig = Field(default_factory=CampaignConfig)
    output_dir: str = Field(default_factory=lambda: settings.OUTPUT_DIR)

    @model_validator(mode="after")
    def _command_inputs(self):
        problems = []
        mat, camp = self.material, self.campaign
        if self.command in (Command.PROFILE, Command.MINIMIZE, Command.MASS_SWEEP) and mat.epsilon is None:
            problems.append(f"material.epsilon is required for '{self.command.value}'")
        if self.command == Command.MINIMIZE and self.grid is None and camp.init != "snapshot":
            problems.append("grid is required for 'minimize'")
        if camp.init == "snapshot" and not camp.snapshot:
            problems.append("campaign.snapshot is required when campaign.init is 'snapshot'")
        if self.command in (Command.CELL, Command.ANISOTROPY) and not mat.eps_list:
            problems.append(f"material.eps_list is required for '{self.command.value}'")
        if self.command == Command.MASS_SWEEP and not camp.m_list:
            problems.append("campaign.m_list is required for 'mass-sweep'")
        if self.command == Command.COMPACTNESS and camp.eps_pair is None:
            problems.append("campaign.eps_pair is required for 'compactness'")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def manifest_echo(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def parse_config(text: str, command: Optional[str] = None) -> RunConfig:
    """
    Parse and validate a run document

    `command`, when given, replaces the document's own command field.

    Raises:
        ConfigError: malformed JSON, with line and column
        pydantic.ValidationError: every violated field, path-qualified
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, line=e.lineno, column=e.colno) from e
    if command is not None and isinstance(data, dict):
        data["command"] = command
    return RunConfig.model_validate(data)


__all__ = [
    'Command',
    'StiffnessConfig',
    'MaterialConfig',
    'GridConfig',
    'LaminateConfig',
    'CampaignConfig',
    'RunConfig',
    'parse_config',
]
