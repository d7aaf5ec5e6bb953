"""Plain-text mesh format, legacy VTK and CSV writers."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import COARSE, FINE, Mesh, _finalize

_REGION_NAMES = {COARSE: "coarse", FINE: "fine"}
_REGION_CODES = {v: k for k, v in _REGION_NAMES.items()}


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``dim npoints nelems nfacets`` followed by points, elements, facets."""
    lines = [f"{mesh.dim} {mesh.n_points} {mesh.n_elements} {len(mesh.facets)}"]
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.points]
    lines += [" ".join(str(int(v)) for v in e) + f" {_REGION_NAMES[int(r)]}"
              for e, r in zip(mesh.elements, mesh.regions)]
    lines += [" ".join(str(int(v)) for v in f) + f" {tag}"
              for f, tag in zip(mesh.facets, mesh.facet_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    dim, npts, nel, nfac = (int(x) for x in rows[0])
    pts = np.array([[float(x) for x in r] for r in rows[1:1 + npts]]).reshape(npts, dim)
    erows = rows[1 + npts:1 + npts + nel]
    elems = [[int(x) for x in r[:dim + 1]] for r in erows]
    regions = [_REGION_CODES[r[dim + 1]] for r in erows]
    frows = rows[1 + npts + nel:1 + npts + nel + nfac]
    tags = {tuple(sorted(int(x) for x in r[:dim])): r[dim] for r in frows}
    return _finalize(pts, elems, tag_of=tags, regions=regions)


_VTK_CELL = {1: 3, 2: 5}  # VTK_LINE, VTK_TRIANGLE


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, title: str = "ltslf") -> None:
    """Legacy ASCII VTK unstructured grid with vertex-based point data.

    Point data arrays may be longer than the vertex count (P2 nodal
    vectors); only the vertex entries are written.
    """
    pts = np.zeros((mesh.n_points, 3))
    pts[:, :mesh.dim] = mesh.points
    nv = mesh.elements.shape[1]
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_points} double"]
    out += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in pts]
    out.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (nv + 1)}")
    out += [f"{nv} " + " ".join(str(int(v)) for v in e) for e in mesh.elements]
    out.append(f"CELL_TYPES {mesh.n_elements}")
    out += [str(_VTK_CELL[mesh.dim])] * mesh.n_elements
    out.append(f"CELL_DATA {mesh.n_elements}")
    out += ["SCALARS region int 1", "LOOKUP_TABLE default"]
    out += [str(int(r)) for r in mesh.regions]
    if point_data:
        out.append(f"POINT_DATA {mesh.n_points}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)[:mesh.n_points]
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [f"{v:.17g}" for v in values]
    Path(path).write_text("\n".join(out) + "\n")


def write_csv(path, header, rows) -> None:
    """CSV with a header row; floats in scientific notation, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_alpha_csv(path, table) -> None:
    """One row per coefficient of an ``AlphaTable``: ``p, j, alpha`` for j = 1..p-1."""
    write_csv(path, ["p", "j", "alpha"],
              [[table.p, j, float(a)] for j, a in enumerate(table.alphas, start=1)])


def write_nodal_csv(path, nodes: np.ndarray, values: np.ndarray) -> None:
    dim = nodes.shape[1]
    header = ["node"] + ["x", "y"][:dim] + ["value"]
    rows = [[i, *map(float, x), float(v)] for i, (x, v) in enumerate(zip(nodes, values))]
    write_csv(path, header, rows)
