"""File formats: legacy ASCII VTK, CSV tables and flat ``key = value`` config files."""

from __future__ import annotations

import ast
import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError

VTK_CELL_TYPES = {2: 5, 3: 10}  # triangle, tetrahedron


def write_vtk(path, mesh, point_data=None, cell_data=None, title="pbafem"):
    """Write an unstructured grid in the legacy ASCII VTK format.

    2D meshes are embedded in the plane ``z = 0``.  ``point_data`` and
    ``cell_data`` map names to scalar arrays.
    """
    path = Path(path)
    X = np.zeros((mesh.n_vertices, 3))
    X[:, : mesh.dim] = mesh.vertices
    nv = mesh.dim + 1
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in X.tolist()]
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (nv + 1)}")
    lines += [f"{nv} " + " ".join(map(str, e)) for e in mesh.elements.tolist()]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += [str(VTK_CELL_TYPES[mesh.dim])] * mesh.n_elements
    for kind, data, count in (("POINT_DATA", point_data, mesh.n_vertices), ("CELL_DATA", cell_data, mesh.n_elements)):
        if not data:
            continue
        lines.append(f"{kind} {count}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float).ravel()
            if values.size != count:
                raise ValueError(f"{kind.lower()} '{name}' has {values.size} entries, expected {count}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(v) for v in values.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk(path):
    """Parse files written by :func:`write_vtk` back into arrays."""
    tokens = Path(path).read_text().split("\n")
    out = {"point_data": {}, "cell_data": {}}
    i = 0
    section = None
    while i < len(tokens):
        line = tokens[i].strip()
        head = line.split()
        if not head:
            i += 1
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([tokens[i + 1 + k].split() for k in range(n)], dtype=float)
            i += n + 1
        elif head[0] == "CELLS":
            n = int(head[1])
            rows = [list(map(int, tokens[i + 1 + k].split())) for k in range(n)]
            out["cells"] = np.array([r[1:] for r in rows], dtype=np.int64)
            i += n + 1
        elif head[0] == "CELL_TYPES":
            n = int(head[1])
            out["cell_types"] = np.array([int(tokens[i + 1 + k]) for k in range(n)])
            i += n + 1
        elif head[0] in ("POINT_DATA", "CELL_DATA"):
            section = ("point_data" if head[0] == "POINT_DATA" else "cell_data", int(head[1]))
            i += 1
        elif head[0] == "SCALARS":
            key, n = section
            out[key][head[1]] = np.array([float(tokens[i + 2 + k]) for k in range(n)])
            i += n + 2
        else:
            i += 1
    return out


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_history_csv(path, history):
    """AFEM history with columns ``k,dofs,eta_sq,osc_sq,energy,ref_error,marked1,marked2,switch``."""
    from .adapt import AfemRecord

    return write_csv(path, AfemRecord.CSV_FIELDS, [r.csv_row() for r in history.records])


def write_trace_csv(path, trace):
    rows = [[s.iteration, repr(s.residual), repr(s.step), repr(s.energy)] for s in trace]
    return write_csv(path, ("iteration", "residual", "step", "energy"), rows)


# ----------------------------------------------------------------------------
# configuration


def parse_value(text: str):
    """Python literal if the text is one, otherwise the bare string."""
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def parse_config(text: str, source="<string>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Values are Python literals (numbers, strings, lists, booleans); anything
    else is kept as a string.  Sections and repeated keys are errors.
    """
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key.isidentifier():
            raise ConfigError(f"{source}:{lineno}: invalid key {key!r}")
        if key in cfg:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        cfg[key] = parse_value(value)
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not valid UTF-8") from exc
    return parse_config(text, str(path))
