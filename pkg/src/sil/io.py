"""Reading and writing multi-dataset studies as headerless CSV files.

Layout of a study directory::

    X_1.csv  y_1.csv  X_2.csv  y_2.csv  ...  [graph.edges]

Values are written with 17 significant digits so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .graph import PredictorGraph, read_edge_file, write_edge_file
from .solver import MultiStudy

GRAPH_FILE = "graph.edges"
_X_NAME = re.compile(r"^X_(\d+)\.csv$")


class DataError(ValueError):
    pass


def read_matrix(path) -> np.ndarray:
    """Parse a headerless numeric CSV; every row must have the same width."""
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            vals = []
            for col, cell in enumerate(row, 1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {col} is not numeric: {cell!r}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def write_matrix(path, A: np.ndarray) -> None:
    A = np.asarray(A, dtype=float)
    np.savetxt(path, A.reshape(A.shape[0], -1), delimiter=",", fmt="%.17g")


def _vector(path) -> np.ndarray:
    A = read_matrix(path)
    if A.shape[1] != 1:
        raise DataError(f"{path}: response file must have one column, found {A.shape[1]}")
    return A[:, 0]


def load_study(directory) -> Tuple[MultiStudy, Optional[PredictorGraph]]:
    """Load ``X_m.csv`` / ``y_m.csv`` for ``m = 1..M`` and the optional graph."""
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    found = sorted(int(m.group(1)) for f in d.iterdir() if (m := _X_NAME.match(f.name)))
    if not found:
        raise DataError(f"{d}: no X_1.csv found")
    M = max(found)
    X, y = [], []
    for m in range(1, M + 1):
        xf, yf = d / f"X_{m}.csv", d / f"y_{m}.csv"
        for f in (xf, yf):
            if not f.exists():
                raise DataError(f"{f}: missing file")
        xm, ym = read_matrix(xf), _vector(yf)
        if ym.shape[0] != xm.shape[0]:
            raise DataError(f"{yf} has {ym.shape[0]} rows but {xf} has {xm.shape[0]}")
        if X and xm.shape[1] != X[0].shape[1]:
            raise DataError(f"{d / 'X_1.csv'} has {X[0].shape[1]} columns but {xf} has {xm.shape[1]}")
        X.append(xm)
        y.append(ym)
    study = MultiStudy(X, y)
    gf = d / GRAPH_FILE
    graph = read_edge_file(gf, study.p) if gf.exists() else None
    return study, graph


def save_study(directory, study: MultiStudy, graph: Optional[PredictorGraph] = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for m, (x, v) in enumerate(zip(study.X, study.y), 1):
        write_matrix(d / f"X_{m}.csv", x)
        write_matrix(d / f"y_{m}.csv", v[:, None])
    if graph is not None:
        write_edge_file(d / GRAPH_FILE, graph)
    return d
