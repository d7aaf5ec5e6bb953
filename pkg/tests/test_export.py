import csv

import numpy as np
import pytest

from ltslf.export import (format_value, read_mesh, write_alpha_csv, write_csv, write_mesh,
                          write_nodal_csv, write_vtk)
from ltslf.fem import build_dofmap
from ltslf.lts import alpha_recursive
from ltslf.mesh import DIRICHLET, build_uniform_interval


@pytest.mark.parametrize("which", ["interval", "lshape"])
def test_mesh_roundtrip(tmp_path, which, lshape_tagged):
    mesh = build_uniform_interval(5, boundary=DIRICHLET) if which == "interval" else lshape_tagged
    path = tmp_path / "m.txt"
    write_mesh(mesh, path)
    header = path.read_text().splitlines()[0].split()
    assert header == [str(mesh.dim), str(mesh.n_points), str(mesh.n_elements),
                      str(len(mesh.facets))]
    back = read_mesh(path)
    np.testing.assert_array_equal(back.points, mesh.points)
    np.testing.assert_array_equal(back.elements, mesh.elements)
    np.testing.assert_array_equal(back.regions, mesh.regions)
    assert sorted(map(tuple, back.facets.tolist())) == sorted(map(tuple, mesh.facets.tolist()))
    assert sorted(back.facet_tags) == sorted(mesh.facet_tags)


def test_vtk_layout(tmp_path, lshape_tagged):
    dm = build_dofmap(lshape_tagged, 2)
    u = np.arange(dm.n_dofs, dtype=float)
    path = tmp_path / "u.vtk"
    write_vtk(path, lshape_tagged, {"u": u})
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert f"POINTS {lshape_tagged.n_points} double" in lines
    assert f"CELLS {lshape_tagged.n_elements} {4 * lshape_tagged.n_elements}" in lines
    i = lines.index("SCALARS u double 1")
    vals = np.array(lines[i + 2:i + 2 + lshape_tagged.n_points], dtype=float)
    np.testing.assert_array_equal(vals, u[:lshape_tagged.n_points])
    i = lines.index(f"CELL_TYPES {lshape_tagged.n_elements}")
    assert set(lines[i + 1:i + 1 + lshape_tagged.n_elements]) == {"5"}


def test_vtk_mesh_only(tmp_path):
    path = tmp_path / "m.vtk"
    write_vtk(path, build_uniform_interval(3))
    text = path.read_text()
    assert "POINT_DATA" not in text and "CELL_TYPES 3\n3\n3\n3" in text


def test_csv_formats(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b", "c", "d"], [[1, 0.1, True, "x"], [np.int64(2), np.float64(3), False, "y"]])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["a", "b", "c", "d"]
    assert rows[1] == ["1", "1.0000000000000001e-01", "true", "x"]
    assert float(rows[2][1]) == 3.0 and rows[2][2] == "false"


def test_format_value_roundtrip():
    x = 1 / 3
    assert float(format_value(x)) == x


def test_alpha_csv(tmp_path):
    path = tmp_path / "a.csv"
    write_alpha_csv(path, alpha_recursive(4))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["p", "j", "alpha"]
    assert [float(r[2]) for r in rows[1:]] == [10.0, -4.0, 0.5]
    assert [r[1] for r in rows[1:]] == ["1", "2", "3"]


def test_nodal_csv(tmp_path):
    path = tmp_path / "n.csv"
    nodes = np.array([[0.0, 0.0], [1.0, 0.5]])
    write_nodal_csv(path, nodes, np.array([2.0, -1.0]))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["node", "x", "y", "value"]
    assert float(rows[2][2]) == 0.5 and float(rows[2][3]) == -1.0
