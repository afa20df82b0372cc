"""CSV/JSON artifact writers.

Floats are written with 17 significant digits so they round-trip exactly.
Files are written to a temporary sibling and renamed into place; CSV uses
``,`` delimiters and LF line endings.
"""

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x):
    return format(float(x), ".17g")


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def to_json(obj, indent=2, _level=0):
    """JSON text with floats at 17 significant digits; non-finite floats become ``null``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj):
    return atomic_write_text(path, to_json(obj) + "\n")


def write_ensemble_csv(path, ensemble):
    """Columns ``path_id,k,s,x0,x1,x2,x3``, one row per recorded state."""
    rows = []
    for p in range(ensemble.n_paths):
        for r, (k, s) in enumerate(zip(ensemble.steps, ensemble.s_values)):
            rows.append([p, int(k), float(s), *map(float, ensemble.points[p, r])])
    return write_csv(path, ["path_id", "k", "s", "x0", "x1", "x2", "x3"], rows)


def write_operator(path, matrix):
    """Coordinate text format: one ``row col value`` line per stored entry."""
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[i]} {coo.col[i]} {fmt(coo.data[i])}" for i in order]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def spectrum_to_json(values):
    return [{"re": float(z.real), "im": float(z.imag)} for z in np.asarray(values, dtype=complex)]


def write_grid_csv(path, coords, values, names=None, value_name="value"):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    names = names or [f"x{i}" for i in range(coords.shape[1])]
    rows = [[*map(float, c), float(v)] for c, v in zip(coords, np.asarray(values, dtype=float))]
    return write_csv(path, [*names, value_name], rows)
