"""
I/O helpers - number formatting and versioned CSV tables
"""
from pathlib import Path
from typing import Any, Iterable, Sequence, Union
import csv
import json
import math

import numpy as np

CSV_VERSION = "v1"


def fmt17(x: Any) -> str:
    """17 significant digits: enough to round-trip any double"""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    value = float(x)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return "%.17g" % value


def csv_header(command: str) -> str:
    return f"# gammaphase {CSV_VERSION} {command}"


def write_csv(path: Union[str, Path], command: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write a result table

    First line is the version comment, second the column names, then one
    line per row with every number at 17 significant digits.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(csv_header(command) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt17(v) for v in row])
    return path


def write_json(path: Union[str, Path], payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


__all__ = ['fmt17', 'csv_header', 'write_csv', 'write_json', 'CSV_VERSION']
