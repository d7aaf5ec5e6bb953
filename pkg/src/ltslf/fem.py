"""Lagrange P1/P2 spaces, operator assembly, projections and norms.

Shape functions are written in barycentric coordinates so the same code
serves intervals and triangles.  Operators are assembled in COO form and
converted to CSR; duplicate summation in scipy is order-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET, FINE, Mesh


class AssemblyError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


# -------------------------------------------------------------- quadrature


def quadrature(dim: int, degree: int):
    """Barycentric points (nq, dim+1) and weights summing to one.

    1D rules are Gauss-Legendre; 2D uses the 7-point degree-5 rule, exact
    for the degree <= 4 integrands of P2 mass matrices.
    """
    if dim == 1:
        n = max(1, (degree + 2) // 2)
        x, w = np.polynomial.legendre.leggauss(n)
        s = 0.5 * (x + 1.0)
        return np.column_stack([1.0 - s, s]), 0.5 * w
    if degree > 5:
        raise ValueError("2D quadrature available up to degree 5")
    r15 = np.sqrt(15.0)
    a1, b1 = (6 - r15) / 21, (9 + 2 * r15) / 21
    a2, b2 = (6 + r15) / 21, (9 - 2 * r15) / 21
    w1, w2 = (155 - r15) / 1200, (155 + r15) / 1200
    bary = [(1 / 3, 1 / 3, 1 / 3)]
    weights = [9 / 40]
    for a, b, w in ((a1, b1, w1), (a2, b2, w2)):
        for perm in ((b, a, a), (a, b, a), (a, a, b)):
            bary.append(perm)
            weights.append(w)
    return np.array(bary), np.array(weights)


# ------------------------------------------------------------------ basis


def _local_nodes(dim: int, degree: int):
    """Local nodes as tuples of vertex indices (vertex or edge midpoint)."""
    verts = [(i,) for i in range(dim + 1)]
    if degree == 1:
        return verts
    return verts + [tuple(e) for e in combinations(range(dim + 1), 2)]


def shape_values(dim: int, degree: int, bary: np.ndarray):
    """Basis values (nq, nloc) and derivatives w.r.t. barycentrics (nq, nloc, dim+1)."""
    nodes = _local_nodes(dim, degree)
    nq = bary.shape[0]
    val = np.zeros((nq, len(nodes)))
    dval = np.zeros((nq, len(nodes), dim + 1))
    for k, node in enumerate(nodes):
        if degree == 1:
            i, = node
            val[:, k] = bary[:, i]
            dval[:, k, i] = 1.0
        elif len(node) == 1:
            i, = node
            val[:, k] = bary[:, i] * (2 * bary[:, i] - 1)
            dval[:, k, i] = 4 * bary[:, i] - 1
        else:
            i, j = node
            val[:, k] = 4 * bary[:, i] * bary[:, j]
            dval[:, k, i] = 4 * bary[:, j]
            dval[:, k, j] = 4 * bary[:, i]
    return val, dval


def barycentric_gradients(mesh: Mesh):
    """Gradients of the barycentric coordinates, shape (ne, dim+1, dim)."""
    pts = mesh.points[mesh.elements]
    B = np.transpose(pts[:, 1:] - pts[:, :1], (0, 2, 1))  # columns v_i - v_0
    Binv = np.linalg.inv(B)  # rows are grad lambda_1..d
    g0 = -Binv.sum(axis=1, keepdims=True)
    return np.concatenate([g0, Binv], axis=1)


# ----------------------------------------------------------------- dofmap


@dataclass(frozen=True)
class DofMap:
    """Global nodal points and element-to-node connectivity.

    ``free`` lists nodes not constrained by Dirichlet conditions; operators
    returned by :func:`build_discretization` act on the free nodes only.
    """

    degree: int
    nodes: np.ndarray
    cell_dofs: np.ndarray
    dirichlet_mask: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.nodes.shape[0]

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        """Free-node vector to a full nodal vector (zero Dirichlet values)."""
        full = np.zeros(self.n_dofs)
        full[self.free] = u_free
        return full


def build_dofmap(mesh: Mesh, degree: int = 1, dirichlet_tags=(DIRICHLET,)) -> DofMap:
    if degree not in (1, 2):
        raise ValueError(f"unsupported degree {degree}; use 1 or 2")
    dim = mesh.dim
    local = _local_nodes(dim, degree)
    coords = [tuple(p) for p in mesh.points]
    index = {(v,): v for v in range(mesh.n_points)}
    cell = np.empty((mesh.n_elements, len(local)), dtype=np.int64)
    for e, verts in enumerate(mesh.elements.tolist()):
        for k, node in enumerate(local):
            key = tuple(sorted(verts[i] for i in node))
            if key not in index:
                index[key] = len(coords)
                coords.append(tuple(mesh.points[list(key)].mean(axis=0)))
            cell[e, k] = index[key]
    nodes = np.array(coords, dtype=float).reshape(-1, dim)
    mask = np.zeros(len(nodes), dtype=bool)
    dtags = set(dirichlet_tags or ())
    for facet, tag in zip(mesh.facets.tolist(), mesh.facet_tags):
        if tag not in dtags:
            continue
        mask[facet] = True
        if degree == 2 and dim == 2:
            mask[index[tuple(sorted(facet))]] = True
    return DofMap(degree, nodes, cell, mask)


# --------------------------------------------------------------- assembly


def _element_geometry(mesh: Mesh, degree: int, qdeg: int):
    bary, w = quadrature(mesh.dim, qdeg)
    val, dval = shape_values(mesh.dim, degree, bary)
    vol = mesh.volumes()
    if np.any(vol <= 0):
        raise AssemblyError("degenerate element")
    return bary, w, val, dval, vol


def quadrature_points(mesh: Mesh, bary: np.ndarray) -> np.ndarray:
    """Physical quadrature points, shape (ne, nq, dim)."""
    return np.einsum("qv,evd->eqd", bary, mesh.points[mesh.elements])


def _scatter(dofmap: DofMap, local: np.ndarray) -> sp.csr_matrix:
    cd = dofmap.cell_dofs
    nloc = cd.shape[1]
    rows = np.repeat(cd, nloc, axis=1).ravel()
    cols = np.tile(cd, (1, nloc)).ravel()
    n = dofmap.n_dofs
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_mass(mesh: Mesh, dofmap: DofMap) -> sp.csr_matrix:
    """Consistent mass matrix on all nodes."""
    _, w, val, _, vol = _element_geometry(mesh, dofmap.degree, 2 * dofmap.degree)
    ref = np.einsum("q,qi,qj->ij", w, val, val)
    return _scatter(dofmap, vol[:, None, None] * ref[None])


def assemble_stiffness(mesh: Mesh, dofmap: DofMap, wave_speed=None) -> sp.csr_matrix:
    """Stiffness matrix of a(u, v) = (c^2 grad u, grad v) on all nodes.

    ``wave_speed`` is None (c = 1), a positive number or a callable taking an
    (..., dim) coordinate array.
    """
    qdeg = 2 * (dofmap.degree - 1) if wave_speed is None or np.isscalar(wave_speed) else 5
    bary, w, _, dval, vol = _element_geometry(mesh, dofmap.degree, max(qdeg, 1))
    glam = barycentric_gradients(mesh)
    grads = np.einsum("qik,ekd->eqid", dval, glam)
    if wave_speed is None:
        c2 = np.ones((mesh.n_elements, len(w)))
    elif callable(wave_speed):
        c = np.asarray(wave_speed(quadrature_points(mesh, bary)), dtype=float)
        c2 = np.broadcast_to(c, (mesh.n_elements, len(w))) ** 2
        if np.any(~(c > 0)):
            raise ValueError("wave speed must be positive")
    else:
        if not wave_speed > 0:
            raise ValueError("wave speed must be positive")
        c2 = np.full((mesh.n_elements, len(w)), float(wave_speed) ** 2)
    local = np.einsum("q,eq,eqid,eqjd->eij", w, c2, grads, grads) * vol[:, None, None]
    return _scatter(dofmap, local)


def support_measures(mesh: Mesh, dofmap: DofMap) -> np.ndarray:
    """d_z = |supp b_z|: sum of |tau| over the elements containing node z."""
    vol = mesh.volumes()
    d = np.zeros(dofmap.n_dofs)
    np.add.at(d, dofmap.cell_dofs, np.repeat(vol[:, None], dofmap.cell_dofs.shape[1], axis=1))
    return d


def fine_nodes(mesh: Mesh, dofmap: DofMap) -> np.ndarray:
    """Boolean mask of nodes belonging to at least one fine element."""
    mask = np.zeros(dofmap.n_dofs, dtype=bool)
    mask[dofmap.cell_dofs[mesh.regions == FINE].ravel()] = True
    return mask


def assemble_diag_weights(mesh: Mesh, dofmap: DofMap, fine_set=None,
                          normalized: bool = False) -> np.ndarray:
    """Diagonal of D_N: support measures on the node set N, zero elsewhere.

    ``fine_set`` is a boolean node mask or index array; None means the nodes
    of the fine-tagged elements.  With ``normalized`` each element volume is
    shared equally among its local nodes, so for P1 the weights equal the
    row-sum lumped mass and M_lumped^{-1} D_N is the 0/1 fine-node selector.
    """
    d = support_measures(mesh, dofmap)
    if normalized:
        d = d / dofmap.cell_dofs.shape[1]
    if fine_set is None:
        mask = fine_nodes(mesh, dofmap)
    else:
        fine_set = np.asarray(fine_set)
        if fine_set.dtype == bool:
            mask = fine_set
        else:
            mask = np.zeros(dofmap.n_dofs, dtype=bool)
            mask[fine_set.astype(np.int64)] = True
    return np.where(mask, d, 0.0)


def assemble_load(mesh: Mesh, dofmap: DofMap, g) -> np.ndarray:
    """Load vector (int g b_z)_z for a callable g on (..., dim) coordinates."""
    bary, w, val, _, vol = _element_geometry(mesh, dofmap.degree, 5)
    gq = np.broadcast_to(np.asarray(g(quadrature_points(mesh, bary)), dtype=float),
                         (mesh.n_elements, len(w)))
    local = np.einsum("q,eq,qi->ei", w, gq, val) * vol[:, None]
    b = np.zeros(dofmap.n_dofs)
    np.add.at(b, dofmap.cell_dofs, local)
    return b


def lump(mass: sp.spmatrix) -> np.ndarray:
    """Row-sum lumped mass diagonal."""
    d = np.asarray(mass.sum(axis=1)).ravel()
    if np.any(d <= 0):
        raise AssemblyError("row-sum lumping produced non-positive entries")
    return d


# ----------------------------------------------------------------- solver


def pcg(A, b, tol=1e-12, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns (x, iterations, relative residual).  Raises SolverError when
    the relative residual does not drop below ``tol``.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxiter = maxiter or 10 * n + 100
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    d = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ad = A @ d
        alpha = rz / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, k, res
        z = dinv * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverError(f"PCG did not converge: residual {res:.3e} after {maxiter} iterations")


class MassSolver:
    """Applies M^{-1}.

    ``mode`` is "cg" (Jacobi PCG on the consistent matrix), "direct"
    (sparse LU factorization) or "lumped" (diagonal matrix).
    """

    def __init__(self, mass, mode: str = "cg", tol: float = 1e-12):
        self.mode = mode
        self.tol = tol
        if mode == "lumped":
            self.diag = np.asarray(mass, dtype=float) if not sp.issparse(mass) else lump(mass)
            self.matrix = sp.diags(self.diag).tocsr()
        elif mode in ("cg", "direct"):
            self.matrix = sp.csr_matrix(mass)
            self.diag = None
            if mode == "direct":
                from scipy.sparse.linalg import factorized
                self._factor = factorized(self.matrix.tocsc())
        else:
            raise ValueError(f"unknown mass solver mode {mode!r}")
        self.n_solves = 0

    @property
    def is_diagonal(self) -> bool:
        return self.mode == "lumped"

    def solve(self, b: np.ndarray) -> np.ndarray:
        self.n_solves += 1
        if self.mode == "lumped":
            return b / self.diag
        if self.mode == "direct":
            return self._factor(b)
        return pcg(self.matrix, b, tol=self.tol)[0]

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self.mode == "lumped":
            return self.diag * u
        return self.matrix @ u


# ----------------------------------------------------------- bundled setup


@dataclass(frozen=True)
class Discretization:
    """Mesh, dofmap and the free-node operators needed for time stepping."""

    mesh: Mesh
    dofmap: DofMap
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    unit_stiffness: sp.csr_matrix
    weights: np.ndarray
    fine_weights: np.ndarray

    @property
    def n(self) -> int:
        return self.mass.shape[0]


def build_discretization(mesh: Mesh, degree: int = 1, wave_speed=None,
                         dirichlet_tags=(DIRICHLET,), fine_set=None,
                         restriction: str = "normalized") -> Discretization:
    """Assemble everything and restrict to the free (non-Dirichlet) nodes.

    ``restriction`` selects the fine weights: "normalized" (|supp b_z| over
    the number of local nodes) or "support" (|supp b_z|).
    """
    if restriction not in ("normalized", "support"):
        raise ValueError(f"unknown restriction weights {restriction!r}")
    dm = build_dofmap(mesh, degree, dirichlet_tags)
    free = dm.free
    M = assemble_mass(mesh, dm)
    A = assemble_stiffness(mesh, dm, wave_speed)
    A1 = A if wave_speed is None else assemble_stiffness(mesh, dm)
    d = support_measures(mesh, dm)
    dn = assemble_diag_weights(mesh, dm, fine_set, normalized=restriction == "normalized")

    def restrict(X):
        return sp.csr_matrix(X[free][:, free])

    return Discretization(mesh, dm, restrict(M), restrict(A), restrict(A1), d[free], dn[free])


def project_l2(mesh: Mesh, dofmap: DofMap, mass_solver: MassSolver, g) -> np.ndarray:
    """Free-node coefficients x solving M x = (g, b_z)."""
    b = assemble_load(mesh, dofmap, g)[dofmap.free]
    return mass_solver.solve(b)


def interpolate(dofmap: DofMap, g) -> np.ndarray:
    """Nodal interpolant on all nodes."""
    return np.asarray(g(dofmap.nodes), dtype=float) * np.ones(dofmap.n_dofs)


def norms(u: np.ndarray, mass, unit_stiffness, weights) -> dict:
    """L2, H1 and mesh-dependent norms of a coefficient vector."""
    m = float(u @ (mass @ u))
    a = float(u @ (unit_stiffness @ u))
    dd = float(u @ (weights * u))
    return {"l2": np.sqrt(max(m, 0.0)), "h1": np.sqrt(max(m + a, 0.0)),
            "mesh_dep": np.sqrt(max(dd, 0.0))}


def l2_error(mesh: Mesh, dofmap: DofMap, u_full: np.ndarray, exact) -> float:
    """|| u_h - exact ||_L2 evaluated with the degree-5 rule."""
    bary, w, val, _, vol = _element_geometry(mesh, dofmap.degree, 5)
    uh = np.einsum("qi,ei->eq", val, u_full[dofmap.cell_dofs])
    ue = np.broadcast_to(np.asarray(exact(quadrature_points(mesh, bary)), dtype=float), uh.shape)
    return float(np.sqrt(np.sum((uh - ue) ** 2 * w[None] * vol[:, None])))


def h1_error(mesh: Mesh, dofmap: DofMap, u_full: np.ndarray, exact_grad) -> float:
    """|u_h - exact|_H1 seminorm; ``exact_grad`` maps (..., dim) points to (..., dim)."""
    bary, w, _, dval, vol = _element_geometry(mesh, dofmap.degree, 5)
    grads = np.einsum("qik,ekd->eqid", dval, barycentric_gradients(mesh))
    gh = np.einsum("eqid,ei->eqd", grads, u_full[dofmap.cell_dofs])
    ge = np.asarray(exact_grad(quadrature_points(mesh, bary)), dtype=float)
    diff = np.sum((gh - ge) ** 2, axis=-1)
    return float(np.sqrt(np.sum(diff * w[None] * vol[:, None])))
