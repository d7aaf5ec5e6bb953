"""Conforming simplicial meshes in one and two dimensions.

A :class:`Mesh` stores vertex coordinates, element connectivity, a per-element
region tag (coarse or fine) and tagged boundary facets.  Builders cover the
uniform interval, the unit square and the L-shaped domain with a re-entrant
corner at (0.5, 0.5).  Local refinement uses longest-edge bisection with
Rivara's propagation so that the result never has hanging nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

COARSE = 0
FINE = 1

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class MeshError(ValueError):
    """Raised for invalid mesh construction arguments."""


@dataclass(frozen=True)
class Mesh:
    """Immutable simplicial mesh.

    ``points`` has shape (npoints, dim), ``elements`` (nelems, dim + 1),
    ``regions`` (nelems,) with values COARSE/FINE, ``facets`` (nfacets, dim)
    and ``facet_tags`` (nfacets,) with DIRICHLET/NEUMANN strings.
    """

    points: np.ndarray
    elements: np.ndarray
    regions: np.ndarray
    facets: np.ndarray
    facet_tags: tuple

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def volumes(self) -> np.ndarray:
        """Element measures |tau| (length in 1D, area in 2D)."""
        return np.abs(_signed_volumes(self.points, self.elements))

    def diameters(self) -> np.ndarray:
        """Element diameters h_tau (longest edge)."""
        pts = self.points[self.elements]
        best = np.zeros(self.n_elements)
        nv = self.elements.shape[1]
        for i in range(nv):
            for j in range(i + 1, nv):
                best = np.maximum(best, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
        return best

    def fine_elements(self) -> np.ndarray:
        return np.flatnonzero(self.regions == FINE)

    def with_regions(self, regions) -> "Mesh":
        regions = np.asarray(regions, dtype=np.int8)
        if regions.shape != (self.n_elements,):
            raise MeshError("region array does not match element count")
        return replace(self, regions=regions)

    def with_boundary_tag(self, tag: str) -> "Mesh":
        return replace(self, facet_tags=tuple(tag for _ in self.facet_tags))


@dataclass(frozen=True)
class MeshQuality:
    h: float
    h_min: float
    gamma: float
    c_qu: float


def _signed_volumes(points, elements):
    pts = points[elements]
    if points.shape[1] == 1:
        return pts[:, 1, 0] - pts[:, 0, 0]
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _local_facets(dim):
    if dim == 1:
        return ((0,), (1,))
    return ((1, 2), (0, 2), (0, 1))


def facet_map(elements: np.ndarray, dim: int) -> dict:
    """Map each sorted facet vertex tuple to the list of elements containing it."""
    out: dict = {}
    for e, verts in enumerate(elements.tolist()):
        for lf in _local_facets(dim):
            key = tuple(sorted(verts[i] for i in lf))
            out.setdefault(key, []).append(e)
    return out


def _boundary_facets(elements, dim):
    return sorted(k for k, v in facet_map(elements, dim).items() if len(v) == 1)


def _finalize(points, elements, tag_of=None, default_tag=NEUMANN, regions=None) -> Mesh:
    points = np.asarray(points, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    dim = points.shape[1]
    # orient positively so that signed volumes are usable downstream
    neg = _signed_volumes(points, elements) < 0
    if np.any(neg):
        elements = elements.copy()
        elements[neg, 0], elements[neg, 1] = elements[neg, 1].copy(), elements[neg, 0].copy()
    bnd = _boundary_facets(elements, dim)
    tags = tuple((tag_of or {}).get(f, default_tag) for f in bnd)
    if regions is None:
        regions = np.zeros(len(elements), dtype=np.int8)
    mesh = Mesh(points, elements, np.asarray(regions, dtype=np.int8),
                np.asarray(bnd, dtype=np.int64).reshape(len(bnd), dim), tags)
    check_mesh(mesh)
    return mesh


def check_mesh(mesh: Mesh) -> None:
    """Raise MeshError if the mesh is degenerate or non-conforming."""
    if not np.all(np.isfinite(mesh.points)):
        raise MeshError("non-finite coordinates")
    for verts in mesh.elements:
        if len(set(verts.tolist())) != len(verts):
            raise MeshError("element with repeated vertex")
    if np.any(mesh.volumes() <= 0):
        raise MeshError("element with non-positive volume")
    fm = facet_map(mesh.elements, mesh.dim)
    if any(len(v) > 2 for v in fm.values()):
        raise MeshError("facet shared by more than two elements")
    if mesh.dim == 2 and has_hanging_nodes(mesh):
        raise MeshError("hanging node detected")


def has_hanging_nodes(mesh: Mesh) -> bool:
    """True if some vertex lies in the interior of a boundary-of-element edge.

    A conforming triangulation has every single-owner edge on the domain
    boundary; a hanging node shows up as a vertex strictly inside such an
    edge.
    """
    if mesh.dim == 1:
        return False
    fm = facet_map(mesh.elements, 2)
    pts = mesh.points
    for (a, b), owners in fm.items():
        if len(owners) != 1:
            continue
        pa, pb = pts[a], pts[b]
        seg = pb - pa
        L2 = seg @ seg
        rel = pts - pa
        t = rel @ seg / L2
        cross = rel[:, 0] * seg[1] - rel[:, 1] * seg[0]
        inside = (t > 1e-12) & (t < 1 - 1e-12) & (np.abs(cross) <= 1e-12 * L2)
        if np.any(inside):
            return True
    return False


# ---------------------------------------------------------------- builders


def build_uniform_interval(n_elems: int, length: float = 1.0,
                           boundary: str = NEUMANN) -> Mesh:
    if int(n_elems) != n_elems or n_elems < 1:
        raise MeshError("n_elems must be a positive integer")
    if not length > 0:
        raise MeshError("length must be positive")
    x = np.linspace(0.0, length, int(n_elems) + 1)
    elems = np.column_stack([np.arange(n_elems), np.arange(1, n_elems + 1)])
    return _finalize(x[:, None], elems, default_tag=boundary)


def build_interval(nodes, boundary: str = NEUMANN) -> Mesh:
    """Interval mesh from sorted (possibly graded) node coordinates."""
    x = np.asarray(nodes, dtype=float)
    if x.ndim != 1 or len(x) < 2 or np.any(np.diff(x) <= 0):
        raise MeshError("nodes must be strictly increasing with at least two entries")
    n = len(x) - 1
    elems = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return _finalize(x[:, None], elems, default_tag=boundary)


def _union_jack(cells, n_per_unit, boundary):
    """Triangulate a set of unit grid cells (i, j) with alternating diagonals.

    Cell (i, j) is split along the (i,j)-(i+1,j+1) diagonal when i + j is
    even and along the other diagonal otherwise, so every grid vertex with
    even index sum is surrounded by diagonals meeting at it.
    """
    h = 1.0 / n_per_unit
    index: dict = {}
    pts = []

    def vid(i, j):
        if (i, j) not in index:
            index[(i, j)] = len(pts)
            pts.append((i * h, j * h))
        return index[(i, j)]

    elems = []
    for i, j in sorted(cells):
        a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
        if (i + j) % 2 == 0:
            elems += [(a, b, c), (a, c, d)]
        else:
            elems += [(a, b, d), (b, c, d)]
    return _finalize(pts, elems, default_tag=boundary)


def _cells_per_unit(h_init: float) -> int:
    n = Fraction(1, 2) / Fraction(h_init).limit_denominator(10**6)
    if n.denominator != 1 or n < 1 or not math.isclose(0.5 / h_init, float(n), rel_tol=1e-9):
        raise MeshError(f"h_init={h_init} must divide the arm length 0.5")
    return 2 * int(n)


def build_unit_square(n: int, boundary: str = DIRICHLET) -> Mesh:
    """Unit square split into n x n cells of two right triangles each."""
    if int(n) != n or n < 1:
        raise MeshError("n must be a positive integer")
    cells = [(i, j) for i in range(n) for j in range(n)]
    return _union_jack(cells, n, boundary)


def build_lshape_mesh(h_init: float) -> Mesh:
    """L-shape (0,1)^2 minus the lower-right quadrant, all boundaries Neumann.

    ``h_init`` is the leg length of the congruent right triangles; it must
    divide 0.5.  The re-entrant corner (0.5, 0.5) is a vertex shared by six
    triangles.
    """
    if not h_init > 0:
        raise MeshError("h_init must be positive")
    n = _cells_per_unit(h_init)
    half = n // 2
    cells = [(i, j) for i in range(n) for j in range(n) if not (i >= half and j < half)]
    return _union_jack(cells, n, NEUMANN)


# -------------------------------------------------------------- refinement


class _Triangulation:
    """Mutable triangle soup used during bisection."""

    def __init__(self, mesh: Mesh):
        self.points = [tuple(p) for p in mesh.points.tolist()]
        self.tris = {k: tuple(t) for k, t in enumerate(mesh.elements.tolist())}
        self.region = {k: int(r) for k, r in enumerate(mesh.regions.tolist())}
        self.next_id = len(self.tris)
        self.edge_owner: dict = {}
        for k, t in self.tris.items():
            self._register(k, t)
        self.btag = {tuple(f): tag for f, tag in zip(mesh.facets.tolist(), mesh.facet_tags)}
        self.midpoint: dict = {}

    @staticmethod
    def _edges(t):
        a, b, c = t
        return [tuple(sorted(e)) for e in ((a, b), (b, c), (a, c))]

    def _register(self, k, t):
        for e in self._edges(t):
            self.edge_owner.setdefault(e, set()).add(k)

    def _unregister(self, k, t):
        for e in self._edges(t):
            self.edge_owner[e].discard(k)
            if not self.edge_owner[e]:
                del self.edge_owner[e]

    def longest_edge(self, k):
        t = self.tris[k]
        best, best_len = None, -1.0
        for e in self._edges(t):
            pa, pb = self.points[e[0]], self.points[e[1]]
            ln = math.dist(pa, pb)
            # ties broken by vertex ids for determinism
            if ln > best_len * (1 + 1e-12) or (abs(ln - best_len) <= 1e-12 * ln and e < best):
                best, best_len = e, ln
        return best

    def neighbor(self, k, edge):
        others = self.edge_owner[edge] - {k}
        return next(iter(others)) if others else None

    def _mid(self, edge):
        if edge not in self.midpoint:
            pa, pb = self.points[edge[0]], self.points[edge[1]]
            self.midpoint[edge] = len(self.points)
            self.points.append(((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2))
            if edge in self.btag:
                tag = self.btag.pop(edge)
                m = self.midpoint[edge]
                self.btag[tuple(sorted((edge[0], m)))] = tag
                self.btag[tuple(sorted((m, edge[1])))] = tag
        return self.midpoint[edge]

    def _split(self, k, edge):
        t = self.tris.pop(k)
        reg = self.region.pop(k)
        self._unregister(k, t)
        m = self._mid(edge)
        apex = next(v for v in t if v not in edge)
        children = []
        for end in edge:
            c = (apex, end, m)
            cid = self.next_id
            self.next_id += 1
            self.tris[cid] = c
            self.region[cid] = reg
            self._register(cid, c)
            children.append(cid)
        return children

    def bisect(self, k):
        """Bisect triangle k, propagating along its longest-edge path."""
        while k in self.tris:
            path = [k]
            while True:
                cur = path[-1]
                e = self.longest_edge(cur)
                nb = self.neighbor(cur, e)
                if nb is None:
                    self._split(cur, e)
                    break
                if self.longest_edge(nb) == e:
                    self._split(cur, e)
                    self._split(nb, e)
                    break
                path.append(nb)

    def to_mesh(self) -> Mesh:
        keys = sorted(self.tris)
        elems = [self.tris[k] for k in keys]
        regions = [self.region[k] for k in keys]
        return _finalize(self.points, elems, tag_of=self.btag, regions=regions)


def bisect_elements(mesh: Mesh, marked) -> Mesh:
    """Longest-edge bisection of the marked triangles with conformity closure."""
    if mesh.dim != 2:
        raise MeshError("bisection implemented for triangles only")
    tri = _Triangulation(mesh)
    for k in sorted(set(int(m) for m in marked)):
        tri.bisect(k)
    return tri.to_mesh()


def _vertex_index(mesh: Mesh, corner) -> int:
    corner = np.asarray(corner, dtype=float).reshape(-1)
    d = np.linalg.norm(mesh.points - corner, axis=1)
    i = int(np.argmin(d))
    if d[i] > 1e-12:
        raise MeshError(f"corner {corner.tolist()} is not a mesh vertex")
    return i


def refine_corner(mesh: Mesh, corner=(0.5, 0.5)) -> Mesh:
    """One corner refinement: bisect the elements at the corner, twice.

    The first pass bisects the triangles incident to the corner; the second
    bisects every triangle of the resulting mesh having the corner as a
    vertex.  For the L-shape this halves the element diameter at the corner.
    """
    for _ in range(2):
        c = _vertex_index(mesh, corner)
        marked = np.flatnonzero(np.any(mesh.elements == c, axis=1))
        mesh = bisect_elements(mesh, marked)
    return mesh


# ------------------------------------------------------------ partitioning


def element_neighbors(mesh: Mesh) -> list:
    """Facet-adjacent element lists."""
    nbrs = [set() for _ in range(mesh.n_elements)]
    for owners in facet_map(mesh.elements, mesh.dim).values():
        if len(owners) == 2:
            a, b = owners
            nbrs[a].add(b)
            nbrs[b].add(a)
    return [sorted(s) for s in nbrs]


def partition_fine(mesh: Mesh, size_threshold: float, overlap_layers: int = 0) -> Mesh:
    """Tag elements with h_tau <= threshold as fine, then grow by overlap rings.

    Each ring adds the elements sharing a facet with the current fine set.
    """
    diam = mesh.diameters()
    h = diam.max()
    if not (0 < size_threshold <= h * (1 + 1e-12)):
        raise MeshError(f"threshold {size_threshold} outside (0, h={h}]")
    if overlap_layers < 0:
        raise MeshError("overlap_layers must be non-negative")
    fine = diam <= size_threshold * (1 + 1e-10)
    nbrs = element_neighbors(mesh)
    for _ in range(int(overlap_layers)):
        grow = fine.copy()
        for e in np.flatnonzero(fine):
            grow[nbrs[e]] = True
        fine = grow
    return mesh.with_regions(np.where(fine, FINE, COARSE))


def default_threshold(mesh: Mesh) -> float:
    """Threshold separating the refined elements from the original ones.

    Chosen as 3/4 of h: on bisection-refined meshes the second-largest
    diameter is h/sqrt(2) < 0.75 h, so everything produced by refinement is
    tagged fine.
    """
    return 0.75 * float(mesh.diameters().max())


# ----------------------------------------------------------------- quality


def quality(mesh: Mesh) -> MeshQuality:
    diam = mesh.diameters()
    h, h_min = float(diam.max()), float(diam.min())
    if mesh.dim == 1:
        # neighbor-ratio definition: elements sharing a vertex
        gamma = 1.0
        owners: dict = {}
        for e, verts in enumerate(mesh.elements.tolist()):
            for v in verts:
                owners.setdefault(v, []).append(e)
        for es in owners.values():
            hs = diam[es]
            gamma = max(gamma, float(hs.max() / hs.min()))
    else:
        pts = mesh.points[mesh.elements]
        a = np.linalg.norm(pts[:, 1] - pts[:, 2], axis=1)
        b = np.linalg.norm(pts[:, 0] - pts[:, 2], axis=1)
        c = np.linalg.norm(pts[:, 0] - pts[:, 1], axis=1)
        s = 0.5 * (a + b + c)
        rho = 2.0 * mesh.volumes() / s  # inscribed-ball diameter
        gamma = float(np.max(diam / rho))
    return MeshQuality(h=h, h_min=h_min, gamma=gamma, c_qu=h / h_min)
