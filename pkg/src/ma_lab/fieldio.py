"""Field files: a JSON header line describing the grid, then the node values.

Two bodies are supported, chosen by file extension:

* ``.csv``  -- one row ``x_1,...,x_n,value`` per node in C order, floats in
  ``repr`` form so they round-trip exactly;
* anything else -- raw little-endian float64 values in C order.

The header line is ``#MAFIELD {json}`` in both cases.
"""
from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .grid import GridError, GridSpec, PotentialField, ScalarField

MAGIC = "#MAFIELD "


def _header(grid: GridSpec, body: str, extra: dict | None) -> str:
    meta = {"grid": grid.to_dict(), "body": body}
    if extra:
        meta["meta"] = extra
    return MAGIC + json.dumps(meta, sort_keys=True) + "\n"


def write_field(path, f: ScalarField, meta: dict | None = None) -> Path:
    path = Path(path)
    body = "csv" if path.suffix.lower() == ".csv" else "f64le"
    with open(path, "wb") as fh:
        fh.write(_header(f.grid, body, meta).encode())
        if body == "csv":
            pts = f.grid.points()
            vals = f.values.reshape(-1)
            cols = [f"x{k + 1}" for k in range(f.grid.dim)] + ["value"]
            buf = io.StringIO()
            buf.write(",".join(cols) + "\n")
            for p, v in zip(pts, vals):
                buf.write(",".join(repr(float(c)) for c in p) + "," + repr(float(v)) + "\n")
            fh.write(buf.getvalue().encode())
        else:
            fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline().decode()
    if not line.startswith(MAGIC):
        raise GridError(f"{path}: not a field file (missing {MAGIC.strip()} header)")
    return json.loads(line[len(MAGIC):])


def read_field(path, potential: bool = True) -> ScalarField:
    path = Path(path)
    with open(path, "rb") as fh:
        line = fh.readline().decode()
        if not line.startswith(MAGIC):
            raise GridError(f"{path}: not a field file")
        meta = json.loads(line[len(MAGIC):])
        grid = GridSpec.from_dict(meta["grid"])
        rest = fh.read()
    if meta["body"] == "csv":
        text = rest.decode().splitlines()
        rows = np.array([[float(c) for c in ln.split(",")] for ln in text[1:] if ln.strip()])
        if rows.shape != (grid.size, grid.dim + 1):
            raise GridError(f"{path}: expected {grid.size} rows of {grid.dim + 1} columns")
        vals = rows[:, -1].reshape(grid.shape)
    else:
        vals = np.frombuffer(rest, dtype="<f8")
        if vals.size != grid.size:
            raise GridError(f"{path}: expected {grid.size} values, found {vals.size}")
        vals = vals.reshape(grid.shape).astype(float)
    cls = PotentialField if potential else ScalarField
    return cls(grid, vals)


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_columns(path, grid: GridSpec, columns: dict[str, np.ndarray], mask: np.ndarray | None = None):
    """Plain CSV of node coordinates plus named per-node columns (for plotting)."""
    pts = grid.points()
    keep = np.ones(grid.size, bool) if mask is None else mask.reshape(-1)
    names = [f"x{k + 1}" for k in range(grid.dim)] + list(columns)
    data = [pts[:, k] for k in range(grid.dim)] + [np.asarray(c, float).reshape(-1) for c in columns.values()]
    arr = np.column_stack(data)[keep]
    np.savetxt(path, arr, delimiter=",", header=",".join(names), comments="", fmt="%.17g")
