"""CSV files: designs (``x1..xd,y[,noise_var]``), point sets and path tables."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .kriging import Design

__all__ = ["read_design", "write_design", "append_to_design", "read_points",
           "write_points", "write_table"]


def _fmt(v) -> str:
    return repr(float(v))


def read_design(path) -> Design:
    """Load a design CSV; without a ``noise_var`` column evaluations are exact."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty design file")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    xcols.sort(key=lambda i: int(header[i][1:]))
    if not xcols or "y" not in header:
        raise ValueError(f"{path}: header needs x1..xd and y columns, got {header}")
    if [int(header[i][1:]) for i in xcols] != list(range(1, len(xcols) + 1)):
        raise ValueError(f"{path}: factor columns must be x1..x{len(xcols)}")
    ycol = header.index("y")
    ncol = header.index("noise_var") if "noise_var" in header else None
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise ValueError(f"{path}: design has no rows")
    data = np.array([[float(c) for c in r] for r in body])
    noise = data[:, ncol] if ncol is not None else None
    return Design(data[:, xcols], data[:, ycol], noise)


def write_design(design: Design, path) -> None:
    d = design.dim
    header = [f"x{j + 1}" for j in range(d)] + ["y"]
    noisy = design.noise_vars is not None
    if noisy:
        header.append("noise_var")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(design.n):
            row = [_fmt(v) for v in design.points[i]] + [_fmt(design.values[i])]
            if noisy:
                row.append(_fmt(design.noise_vars[i]))
            w.writerow(row)


def append_to_design(path, x, y: float, noise_var: float | None = None) -> Design:
    """Add one evaluation to a design file (created if missing) and return it.

    A noise variance on an exact design adds the column, with zeros above.
    """
    x = np.atleast_1d(np.asarray(x, float))
    if Path(path).exists():
        design = read_design(path)
        if design.noise_vars is None and noise_var is not None:
            design = Design(design.points, design.values, np.zeros(design.n))
        if design.noise_vars is not None and noise_var is None:
            noise_var = 0.0
        design = design.append(x, y, noise_var)
    else:
        design = Design(x[None, :], [y], None if noise_var is None else [noise_var])
    write_design(design, path)
    return design


def read_points(path) -> np.ndarray:
    """Point file with an ``x1..xd`` header (other columns are ignored)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    xcols = sorted((i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()),
                   key=lambda i: int(header[i][1:]))
    if not xcols:
        raise ValueError(f"{path}: no x1..xd columns")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    return np.array([[float(r[i]) for i in xcols] for r in body], dtype=float)


def write_points(points, path, extra: dict | None = None) -> None:
    """Points as ``x1..xd`` plus optional named value columns."""
    pts = np.atleast_2d(np.asarray(points, float))
    extra = extra or {}
    header = [f"x{j + 1}" for j in range(pts.shape[1])] + list(extra)
    cols = [np.asarray(v) for v in extra.values()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, p in enumerate(pts):
            w.writerow([_fmt(v) for v in p] + [_fmt(c[i]) for c in cols])


def write_table(array, path, prefix: str = "v") -> None:
    """A 2-D array with columns ``{prefix}1..``, one row per array row."""
    array = np.atleast_2d(np.asarray(array, float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{j + 1}" for j in range(array.shape[1])])
        for row in array:
            w.writerow([_fmt(v) for v in row])
