"""Structured triangulations of the unit square and P1/P2 block assembly.

The mesh divides [0,1]^2 into N x N squares, each split along the
lower-left to upper-right diagonal.  Scalar pressures live on continuous
P1, displacements on continuous vector P2 (lowest-order Taylor-Hood-type
pairing), all assembled into scipy CSR matrices with quadrature exact for
the polynomial integrands.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MeshError",
    "StructuredMesh",
    "DofMap",
    "build_unit_square_mesh",
    "assemble_stiffness_p1",
    "assemble_mass_p1",
    "assemble_elasticity_p2",
    "assemble_divergence_p2_p1",
    "assemble_load_p1",
    "assemble_load_p2_vector",
    "apply_dirichlet",
    "l2_error_p1",
    "l2_error_p2_vector",
    "export_mesh_txt",
    "export_csr_coo",
]


class MeshError(Exception):
    """Raised on invalid mesh/assembly input."""


# symmetric triangle rules on the reference element, weights summing to 1
# (multiply by |T|); exact for polynomials of the stated degree
_QUAD_DEG2 = (
    np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
    np.array([1 / 3, 1 / 3, 1 / 3]),
)

_d4a, _d4b = 0.108103018168070, 0.445948490915965
_d4c, _d4d = 0.816847572980459, 0.091576213509771
_QUAD_DEG4 = (
    np.array(
        [
            [_d4b, _d4b], [_d4a, _d4b], [_d4b, _d4a],
            [_d4d, _d4d], [_d4c, _d4d], [_d4d, _d4c],
        ]
    ),
    np.array([0.223381589678011] * 3 + [0.109951743655322] * 3),
)


def _p1_basis(points):
    """P1 shape values and reference gradients at reference points."""
    xi, eta = points[:, 0], points[:, 1]
    vals = np.column_stack([1 - xi - eta, xi, eta])
    grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return vals, np.broadcast_to(grads, (points.shape[0], 3, 2))


def _p2_basis(points):
    """P2 shape values and reference gradients at reference points.

    Local numbering: nodes 0..2 are the vertices, node 3+k is the midpoint
    of the edge opposite vertex k.
    """
    xi, eta = points[:, 0], points[:, 1]
    l0, l1, l2 = 1 - xi - eta, xi, eta
    vals = np.column_stack(
        [
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l1 * l2, 4 * l0 * l2, 4 * l0 * l1,
        ]
    )
    g0 = np.array([-1.0, -1.0])
    g1 = np.array([1.0, 0.0])
    g2 = np.array([0.0, 1.0])
    nq = points.shape[0]
    grads = np.zeros((nq, 6, 2))
    grads[:, 0] = (4 * l0 - 1)[:, None] * g0
    grads[:, 1] = (4 * l1 - 1)[:, None] * g1
    grads[:, 2] = (4 * l2 - 1)[:, None] * g2
    grads[:, 3] = 4 * (l2[:, None] * g1 + l1[:, None] * g2)
    grads[:, 4] = 4 * (l2[:, None] * g0 + l0[:, None] * g2)
    grads[:, 5] = 4 * (l1[:, None] * g0 + l0[:, None] * g1)
    return vals, grads


class StructuredMesh:
    """Uniform triangulation of the unit square.

    vertices            (nv, 2) coordinates, grid order (y-major, x fastest)
    triangles           (nt, 3) CCW vertex triples
    boundary_vertices   indices of vertices on the boundary of the square
    edges               (ne, 2) sorted unique vertex pairs, lexicographic
    triangle_edges      (nt, 3) edge index opposite each local vertex
    """

    def __init__(self, N, vertices, triangles, boundary_vertices):
        self.N = N
        self.vertices = vertices
        self.triangles = triangles
        self.boundary_vertices = boundary_vertices
        self.edges, self.triangle_edges = self._build_edges(triangles)
        # affine data per triangle: Jacobian columns are the edge vectors
        v0 = vertices[triangles[:, 0]]
        v1 = vertices[triangles[:, 1]]
        v2 = vertices[triangles[:, 2]]
        j11 = v1[:, 0] - v0[:, 0]
        j12 = v2[:, 0] - v0[:, 0]
        j21 = v1[:, 1] - v0[:, 1]
        j22 = v2[:, 1] - v0[:, 1]
        self.jac_det = j11 * j22 - j12 * j21
        if np.any(self.jac_det <= 0):
            raise MeshError("triangulation contains non-CCW triangles")
        # inverse-transpose Jacobian, for mapping reference gradients
        self.jac_invT = np.empty((triangles.shape[0], 2, 2))
        self.jac_invT[:, 0, 0] = j22 / self.jac_det
        self.jac_invT[:, 0, 1] = -j21 / self.jac_det
        self.jac_invT[:, 1, 0] = -j12 / self.jac_det
        self.jac_invT[:, 1, 1] = j11 / self.jac_det
        self._v0 = v0

    @staticmethod
    def _build_edges(triangles):
        local = [(1, 2), (0, 2), (0, 1)]
        pairs = np.concatenate(
            [np.sort(triangles[:, idx], axis=1) for idx in local], axis=0
        )
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        triangle_edges = inverse.reshape(3, -1).T.copy()
        return edges, triangle_edges

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def edge_midpoints(self):
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def quad_physical(self, points):
        """Map reference quadrature points to physical coordinates, per triangle."""
        v0 = self._v0
        v1 = self.vertices[self.triangles[:, 1]]
        v2 = self.vertices[self.triangles[:, 2]]
        # (nt, nq, 2)
        return (
            v0[:, None, :]
            + points[None, :, 0, None] * (v1 - v0)[:, None, :]
            + points[None, :, 1, None] * (v2 - v0)[:, None, :]
        )


def build_unit_square_mesh(N):
    """Triangulate [0,1]^2 with N x N squares, diagonals lower-left to upper-right."""
    if N < 1:
        raise MeshError(f"N must be >= 1, got {N}")
    n1 = N + 1
    xs = np.linspace(0.0, 1.0, n1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(ix, iy):
        return iy * n1 + ix

    tris = []
    for iy in range(N):
        for ix in range(N):
            a = vid(ix, iy)
            b = vid(ix + 1, iy)
            c = vid(ix + 1, iy + 1)
            d = vid(ix, iy + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    triangles = np.array(tris, dtype=np.int64)
    on_boundary = (
        (vertices[:, 0] == 0.0) | (vertices[:, 0] == 1.0)
        | (vertices[:, 1] == 0.0) | (vertices[:, 1] == 1.0)
    )
    boundary_vertices = np.flatnonzero(on_boundary)
    return StructuredMesh(N, vertices, triangles, boundary_vertices)


class DofMap:
    """Global numbering and Dirichlet set for one field.

    P1: one dof per vertex.  P2: vertex dofs first, then one dof per edge
    midpoint (edges in lexicographic endpoint order).  The vector space
    interleaves components per node: scalar node k owns dofs 2k and 2k+1.
    """

    def __init__(self, mesh, space):
        if space not in ("P1", "P2", "P2-vector"):
            raise MeshError(f"unknown space {space!r}")
        self.space = space
        self.mesh = mesh
        if space == "P1":
            self.num_scalar_nodes = mesh.num_vertices
            self.node_coords = mesh.vertices
            scalar_dirichlet = mesh.boundary_vertices
        else:
            self.num_scalar_nodes = mesh.num_vertices + mesh.num_edges
            self.node_coords = np.vstack([mesh.vertices, mesh.edge_midpoints()])
            mids = mesh.edge_midpoints()
            mid_on_boundary = (
                (mids[:, 0] == 0.0) | (mids[:, 0] == 1.0)
                | (mids[:, 1] == 0.0) | (mids[:, 1] == 1.0)
            )
            scalar_dirichlet = np.concatenate(
                [mesh.boundary_vertices, mesh.num_vertices + np.flatnonzero(mid_on_boundary)]
            )
        if space == "P2-vector":
            self.ndof = 2 * self.num_scalar_nodes
            self.dirichlet_dofs = np.sort(
                np.concatenate([2 * scalar_dirichlet, 2 * scalar_dirichlet + 1])
            )
        else:
            self.ndof = self.num_scalar_nodes
            self.dirichlet_dofs = np.sort(scalar_dirichlet)

    def cell_dofs(self):
        """(nt, nloc) connectivity of scalar nodes (P1: 3, P2: 6)."""
        mesh = self.mesh
        if self.space == "P1":
            return mesh.triangles
        return np.hstack([mesh.triangles, mesh.num_vertices + mesh.triangle_edges])

    def interpolate(self, f):
        """Nodal interpolation of a callable f(x, y); vector f returns (n, 2)."""
        xy = self.node_coords
        vals = np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float)
        if self.space == "P2-vector":
            out = np.empty(self.ndof)
            out[0::2] = vals[0]
            out[1::2] = vals[1]
            return out
        return vals


def _assemble_scalar(mesh, dofmap, quad, kernel):
    """Generic scalar assembly: kernel(q, vals, grads) -> (nt, nloc, nloc)."""
    points, weights = quad
    vals, ref_grads = (_p1_basis if dofmap.space == "P1" else _p2_basis)(points)
    nloc = vals.shape[1]
    conn = dofmap.cell_dofs()
    nt = mesh.num_triangles
    area = 0.5 * mesh.jac_det
    local = np.zeros((nt, nloc, nloc))
    for q, w in enumerate(weights):
        # physical gradients: (nt, nloc, 2)
        g = np.einsum("tab,lb->tla", mesh.jac_invT, ref_grads[q])
        local += w * kernel(vals[q], g) * area[:, None, None]
    rows = np.repeat(conn, nloc, axis=1).ravel()
    cols = np.tile(conn, (1, nloc)).ravel()
    n = dofmap.ndof
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness_p1(mesh, coeff=1.0):
    """coeff * integral(grad phi_i . grad phi_j) on P1."""
    if coeff < 0:
        raise MeshError(f"coefficient must be nonnegative, got {coeff}")
    dofmap = DofMap(mesh, "P1")

    def kernel(vals, grads):
        return np.einsum("tla, tma -> tlm", grads, grads)

    A = _assemble_scalar(mesh, dofmap, _QUAD_DEG2, kernel)
    if coeff != 1.0:
        A = A * coeff
    return A


def assemble_mass_p1(mesh, coeff=1.0):
    """coeff * integral(phi_i phi_j) on P1."""
    if coeff < 0:
        raise MeshError(f"coefficient must be nonnegative, got {coeff}")
    dofmap = DofMap(mesh, "P1")

    def kernel(vals, grads):
        return np.broadcast_to(
            np.outer(vals, vals)[None, :, :], (grads.shape[0],) + (vals.size, vals.size)
        )

    M = _assemble_scalar(mesh, dofmap, _QUAD_DEG2, kernel)
    if coeff != 1.0:
        M = M * coeff
    return M


def assemble_elasticity_p2(mesh, mu=1.0):
    """Vector P2 block of integral(2 mu eps(u) : eps(v)), interleaved dofs."""
    if mu <= 0:
        raise MeshError(f"mu must be positive, got {mu}")
    dofmap = DofMap(mesh, "P2-vector")
    points, weights = _QUAD_DEG4
    _, ref_grads = _p2_basis(points)
    conn_scalar = DofMap(mesh, "P2").cell_dofs()
    nloc = 6
    nt = mesh.num_triangles
    area = 0.5 * mesh.jac_det
    local = np.zeros((nt, 2 * nloc, 2 * nloc))
    for q, w in enumerate(weights):
        g = np.einsum("tab,lb->tla", mesh.jac_invT, ref_grads[q])
        gx, gy = g[:, :, 0], g[:, :, 1]
        # eps(phi_a e_x):eps(phi_b e_x) etc., assembled blockwise
        kxx = np.einsum("tl,tm->tlm", gx, gx) + 0.5 * np.einsum("tl,tm->tlm", gy, gy)
        kyy = np.einsum("tl,tm->tlm", gy, gy) + 0.5 * np.einsum("tl,tm->tlm", gx, gx)
        kxy = 0.5 * np.einsum("tl,tm->tlm", gy, gx)
        scale = (2.0 * mu * w) * area
        local[:, 0::2, 0::2] += scale[:, None, None] * kxx
        local[:, 1::2, 1::2] += scale[:, None, None] * kyy
        local[:, 0::2, 1::2] += scale[:, None, None] * kxy
        local[:, 1::2, 0::2] += scale[:, None, None] * np.swapaxes(kxy, 1, 2)
    conn = np.empty((nt, 2 * nloc), dtype=np.int64)
    conn[:, 0::2] = 2 * conn_scalar
    conn[:, 1::2] = 2 * conn_scalar + 1
    rows = np.repeat(conn, 2 * nloc, axis=1).ravel()
    cols = np.tile(conn, (1, 2 * nloc)).ravel()
    n = dofmap.ndof
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_divergence_p2_p1(mesh):
    """Rectangular block integral(div v q), rows on P1, columns on vector P2."""
    p1 = DofMap(mesh, "P1")
    points, weights = _QUAD_DEG4
    p1_vals, _ = _p1_basis(points)
    _, ref_grads = _p2_basis(points)
    conn_p1 = p1.cell_dofs()
    conn_scalar = DofMap(mesh, "P2").cell_dofs()
    nt = mesh.num_triangles
    area = 0.5 * mesh.jac_det
    local = np.zeros((nt, 3, 12))
    for q, w in enumerate(weights):
        g = np.einsum("tab,lb->tla", mesh.jac_invT, ref_grads[q])
        bx = np.einsum("i,tl->til", w * p1_vals[q], g[:, :, 0]) * area[:, None, None]
        by = np.einsum("i,tl->til", w * p1_vals[q], g[:, :, 1]) * area[:, None, None]
        local[:, :, 0::2] += bx
        local[:, :, 1::2] += by
    conn_v = np.empty((nt, 12), dtype=np.int64)
    conn_v[:, 0::2] = 2 * conn_scalar
    conn_v[:, 1::2] = 2 * conn_scalar + 1
    rows = np.repeat(conn_p1, 12, axis=1).ravel()
    cols = np.tile(conn_v, (1, 3)).ravel()
    return sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(p1.ndof, 2 * (mesh.num_vertices + mesh.num_edges))
    ).tocsr()


def assemble_load_p1(mesh, f):
    """P1 load vector integral(f phi_i) for a callable f(x, y)."""
    points, weights = _QUAD_DEG4
    vals, _ = _p1_basis(points)
    xy = mesh.quad_physical(points)
    fq = np.asarray(f(xy[:, :, 0], xy[:, :, 1]), dtype=float)
    area = 0.5 * mesh.jac_det
    local = np.einsum("q,tq,ql->tl", weights, fq, vals) * area[:, None]
    conn = mesh.triangles
    out = np.zeros(mesh.num_vertices)
    np.add.at(out, conn.ravel(), local.ravel())
    return out


def assemble_load_p2_vector(mesh, f):
    """Vector P2 load integral(f . v) for callable f(x, y) -> (fx, fy)."""
    points, weights = _QUAD_DEG4
    vals, _ = _p2_basis(points)
    xy = mesh.quad_physical(points)
    fx, fy = f(xy[:, :, 0], xy[:, :, 1])
    area = 0.5 * mesh.jac_det
    lx = np.einsum("q,tq,ql->tl", weights, np.asarray(fx, float), vals) * area[:, None]
    ly = np.einsum("q,tq,ql->tl", weights, np.asarray(fy, float), vals) * area[:, None]
    conn_scalar = DofMap(mesh, "P2").cell_dofs()
    out = np.zeros(2 * (mesh.num_vertices + mesh.num_edges))
    np.add.at(out, (2 * conn_scalar).ravel(), lx.ravel())
    np.add.at(out, (2 * conn_scalar + 1).ravel(), ly.ravel())
    return out


def apply_dirichlet(A, rhs, dofs, diag_value=1.0):
    """Symmetric elimination of homogeneous Dirichlet dofs.

    Constrained rows and columns are zeroed, the diagonal set to diag_value
    and the right-hand side entries to zero, keeping the matrix symmetric.
    Returns (A, rhs) as new objects.
    """
    A = sp.csr_matrix(A, copy=True)
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    if dofs.size and (dofs.min() < 0 or dofs.max() >= n):
        raise MeshError(f"Dirichlet dof out of range for size-{n} system")
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    fixed = np.zeros(n)
    fixed[dofs] = diag_value
    A = (D @ A @ D + sp.diags(fixed)).tocsr()
    rhs = np.asarray(rhs, dtype=float).copy()
    rhs[dofs] = 0.0
    return A, rhs


def l2_error_p1(mesh, uh, exact):
    """L2 distance between a P1 coefficient vector and a callable field."""
    points, weights = _QUAD_DEG4
    vals, _ = _p1_basis(points)
    xy = mesh.quad_physical(points)
    uq = np.einsum("tl,ql->tq", uh[mesh.triangles], vals)
    eq = np.asarray(exact(xy[:, :, 0], xy[:, :, 1]), dtype=float)
    area = 0.5 * mesh.jac_det
    val = np.einsum("q,tq->", weights, (uq - eq) ** 2 * area[:, None])
    return float(np.sqrt(val))


def l2_error_p2_vector(mesh, uh, exact):
    """L2 distance between a vector P2 coefficient vector and callable (fx, fy)."""
    points, weights = _QUAD_DEG4
    vals, _ = _p2_basis(points)
    conn_scalar = DofMap(mesh, "P2").cell_dofs()
    xy = mesh.quad_physical(points)
    ex, ey = exact(xy[:, :, 0], xy[:, :, 1])
    uxq = np.einsum("tl,ql->tq", uh[2 * conn_scalar], vals)
    uyq = np.einsum("tl,ql->tq", uh[2 * conn_scalar + 1], vals)
    area = 0.5 * mesh.jac_det
    val = np.einsum(
        "q,tq->", weights, ((uxq - np.asarray(ex, float)) ** 2
                            + (uyq - np.asarray(ey, float)) ** 2) * area[:, None]
    )
    return float(np.sqrt(val))


def export_mesh_txt(mesh, path):
    """Plain-text vertex/triangle listing for external visualization."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.num_vertices} {mesh.num_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.16e} {y:.16e}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def export_csr_coo(matrix, path):
    """Coordinate (row, col, value) text export of a sparse matrix."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.16e}\n")
