"""Result table rows, one model per command; field order is column order"""
from typing import List, Optional, Sequence, Tuple, Type

from pydantic import BaseModel


class WellsRow(BaseModel):
    kind: str
    mu0: Optional[float] = None
    mu1: Optional[float] = None
    fmin: float
    mm_constant: Optional[float] = None


class CompatRow(BaseModel):
    s: float
    nu_angle: float
    a1: float
    a2: float
    residual: float


class ProfileRow(BaseModel):
    s: float
    phi: float


class MinimizeRow(BaseModel):
    iteration: int
    energy: float
    mean_c: float


class CellRow(BaseModel):
    nu_angle: float
    eps: float
    energy: float
    valid: bool
    k_hat: float
    fit_residual: float


class AnisotropyRow(BaseModel):
    nu_angle: float
    eps: float
    energy: float
    compatible: bool
    strictly_increasing: bool
    delta_min: float


class MassRow(BaseModel):
    m: float
    mean: float
    mean_error: float
    energy: float
    sharp_prediction: float
    offset: float
    measured_offset: float
    shift: float
    eta: float
    converged: bool
    error: str = ""


class CompactnessRow(BaseModel):
    eps: float
    energy: float
    mismatch_sq: float
    well_fraction: float
    interface_length: float
    converged: bool


def table(model: Type[BaseModel], rows: Sequence[BaseModel]) -> Tuple[List[str], List[list]]:
    """Column names and row values in declaration order"""
    columns = list(model.model_fields)
    return columns, [[getattr(r, c) for c in columns] for r in rows]


__all__ = [
    'WellsRow',
    'CompatRow',
    'ProfileRow',
    'MinimizeRow',
    'CellRow',
    'AnisotropyRow',
    'MassRow',
    'CompactnessRow',
    'table',
]
