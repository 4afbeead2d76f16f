"""Output formats: JSON and CSV with 17 significant digits, VTK legacy ASCII fields."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """Round-trip float text; non-finite values use the JSON extensions NaN/Infinity."""
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def to_plain(obj):
    """numpy scalars/arrays and tuples to plain Python containers."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written as ``%.17g``; keys sorted."""
    obj = to_plain(obj)
    pad = " " * indent

    def enc(o, level):
        if o is None or isinstance(o, (bool, str, int)):
            return json.dumps(o)
        if isinstance(o, float):
            return fmt(o)
        inner = pad * (level + 1)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{inner}{json.dumps(k)}: {enc(o[k], level + 1)}" for k in sorted(o)]
            return "{\n" + ",\n".join(items) + "\n" + pad * level + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in o):
                return "[" + ", ".join(enc(v, level) for v in o) + "]"
            return "[\n" + ",\n".join(inner + enc(v, level + 1) for v in o) + "\n" + pad * level + "]"
        raise TypeError(f"cannot serialise {type(o).__name__}")

    return enc(obj, 0) + "\n"


def write_json(path, obj) -> Path:
    p = Path(path)
    p.write_text(dumps(obj))
    return p


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows) -> Path:
    p = Path(path)
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return p


def read_csv(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows)


def write_vtk(path, fields: dict, spacing, origin=(0.0, 0.0), title: str = "drifthom field") -> Path:
    """Cell-centred 2-D fields as a legacy ASCII STRUCTURED_POINTS file.

    Arrays are indexed ``[i, j]`` with i along x; VTK wants x fastest.
    """
    shapes = {np.shape(v) for v in fields.values()}
    if len(shapes) != 1:
        raise ValueError("all fields must share one shape")
    nx, ny = shapes.pop()
    hx, hy = (spacing, spacing) if np.isscalar(spacing) else spacing
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {nx + 1} {ny + 1} 1", f"ORIGIN {fmt(origin[0])} {fmt(origin[1])} 0",
             f"SPACING {fmt(hx)} {fmt(hy)} 1", f"CELL_DATA {nx * ny}"]
    for name, arr in fields.items():
        a = np.asarray(arr, dtype=np.float64)
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [" ".join("nan" if not math.isfinite(v) else "%.17g" % v for v in row) for row in a.T]
    p = Path(path)
    p.write_text("\n".join(lines) + "\n")
    return p


def read_vtk(path) -> dict:
    """Inverse of :func:`write_vtk` (fields only)."""
    toks = Path(path).read_text().split("\n")
    dims = next(t for t in toks if t.startswith("DIMENSIONS")).split()
    nx, ny = int(dims[1]) - 1, int(dims[2]) - 1
    out = {}
    k = 0
    while k < len(toks):
        if toks[k].startswith("SCALARS"):
            name = toks[k].split()[1]
            vals = np.array(" ".join(toks[k + 2:k + 2 + ny]).split(), dtype=np.float64)
            out[name] = vals.reshape(ny, nx).T
            k += 2 + ny
        else:
            k += 1
    return out
