"""File writers: legacy VTK snapshots and the per-run CSV logs."""
import os

import numpy as np

from . import postprocess


def _fmt(v):
    return "%.17g" % v


def _write_block(fh, values, per_line):
    values = np.asarray(values, dtype=float).reshape(-1, per_line)
    for row in values:
        fh.write(" ".join(_fmt(v) for v in row) + "\n")


def write_snapshot(path, mesh, u=None, theta=None, p=None, cell_fields=None, title="thermobingham"):
    """Legacy-VTK ASCII unstructured grid of the triangulation.

    Point data: ``velocity`` (vector) and ``temperature``.  Cell data:
    ``pressure`` (quad value copied to its four triangles) and every entry of
    ``cell_fields`` (name -> per-triangle array), e.g. the active mask,
    ``g_T`` and ``mu_T``.  Missing fields are written as zeros.
    """
    n, m = mesh.n_nodes, mesh.n_triangles
    u = np.zeros(2 * n) if u is None else np.asarray(u, dtype=float)
    theta = np.zeros(n) if theta is None else np.asarray(theta, dtype=float)
    p = np.zeros(mesh.n_quads) if p is None else np.asarray(p, dtype=float)
    if u.shape != (2 * n,) or theta.shape != (n,) or p.shape != (mesh.n_quads,):
        raise ValueError("field lengths do not match the mesh")
    cells = {"pressure": p[mesh.tri_quad]}
    for name, val in (cell_fields or {}).items():
        val = np.asarray(val, dtype=float)
        if val.shape != (m,):
            raise ValueError(f"cell field {name!r} needs {m} values")
        cells[name] = val
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {n} double\n")
            _write_block(fh, np.column_stack([mesh.nodes, np.zeros(n)]), 3)
            fh.write(f"CELLS {m} {4 * m}\n")
            for a, b, c in mesh.triangles:
                fh.write(f"3 {a} {b} {c}\n")
            fh.write(f"CELL_TYPES {m}\n")
            fh.write("5\n" * m)
            fh.write(f"POINT_DATA {n}\n")
            fh.write("VECTORS velocity double\n")
            _write_block(fh, np.column_stack([u[:n], u[n:], np.zeros(n)]), 3)
            fh.write("SCALARS temperature double 1\nLOOKUP_TABLE default\n")
            _write_block(fh, theta, 1)
            fh.write(f"CELL_DATA {m}\n")
            for name, val in cells.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                _write_block(fh, val, 1)
    except OSError as err:
        raise OSError(f"cannot write snapshot {path}: {err}") from err


def read_snapshot(path):
    """Parse a file written by :func:`write_snapshot` into a dict of arrays."""
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    out = {"point_data": {}, "cell_data": {}}
    i = 4
    section = None
    while i < len(tokens):
        line = tokens[i].split()
        i += 1
        if not line:
            continue
        key = line[0]
        if key == "POINTS":
            k = int(line[1])
            out["points"] = np.array([tokens[i + j].split() for j in range(k)], dtype=float)
            i += k
        elif key == "CELLS":
            k = int(line[1])
            out["cells"] = np.array([tokens[i + j].split()[1:] for j in range(k)], dtype=int)
            i += k
        elif key == "CELL_TYPES":
            k = int(line[1])
            out["cell_types"] = np.array(tokens[i:i + k], dtype=int)
            i += k
        elif key in ("POINT_DATA", "CELL_DATA"):
            section = "point_data" if key == "POINT_DATA" else "cell_data"
            count = int(line[1])
        elif key == "VECTORS":
            out[section][line[1]] = np.array([tokens[i + j].split() for j in range(count)], dtype=float)
            i += count
        elif key == "SCALARS":
            i += 1  # lookup table line
            out[section][line[1]] = np.array(tokens[i:i + count], dtype=float)
            i += count
    return out


class RunWriter:
    """Appends history rows and SSN iterations to CSV files as the run goes,
    so a failed run leaves its partial history on disk."""

    def __init__(self, output_dir):
        self.output_dir = output_dir
        os.makedirs(os.path.join(output_dir, "snapshots"), exist_ok=True)
        self.history_path = os.path.join(output_dir, "history.csv")
        self.ssn_path = os.path.join(output_dir, "ssn_log.csv")
        with open(self.history_path, "w", encoding="utf-8") as fh:
            fh.write(postprocess.history_header() + "\n")
        with open(self.ssn_path, "w", encoding="utf-8") as fh:
            fh.write("step,iteration,delta\n")

    def record(self, rec):
        with open(self.history_path, "a", encoding="utf-8") as fh:
            fh.write(postprocess.history_line(rec) + "\n")
        if rec.residual_history:
            with open(self.ssn_path, "a", encoding="utf-8") as fh:
                for it, d in enumerate(rec.residual_history, start=1):
                    fh.write(f"{rec.step},{it},{d!r}\n")

    def snapshot_path(self, step):
        return os.path.join(self.output_dir, "snapshots", "step_%06d.vtk" % step)


def read_ssn_log(path):
    """Rows of ``ssn_log.csv`` as ``(step, iteration, delta)`` tuples."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            if line.strip():
                s, it, d = line.strip().split(",")
                rows.append((int(s), int(it), float(d)))
    return rows
