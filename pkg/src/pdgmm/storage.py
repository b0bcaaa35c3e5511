"""Delimited/JSON file helpers shared by dataset export, logs, and the CLI.

Floats are written with 17 significant digits so every value round-trips
exactly; line endings are '\n' regardless of platform.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ValidationError


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, matrix: np.ndarray, header: list[str]):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValidationError(f"expected a 2-D array, got ndim={matrix.ndim}")
    if len(header) != matrix.shape[1]:
        raise ValidationError(
            f"header has {len(header)} names for {matrix.shape[1]} columns"
        )
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in matrix:
            fh.write(",".join(fmt_float(v) for v in r) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        header = fh.readline()
        ncols = len(header.rstrip("\n").split(","))
        data = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    if data.size == 0:
        return np.zeros((0, ncols))
    return data


def write_rows_csv(path, header: list[str], rows):
    """Rows of mixed ints/floats; floats get the 17-digit treatment."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                elif v is None:
                    cells.append("")
                else:
                    cells.append(fmt_float(v))
            fh.write(",".join(cells) + "\n")
