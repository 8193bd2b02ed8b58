"""Block linear systems for the rigid (MPT) and poroelastic (MPET) problems.

MPT couples J Darcy pressures through the exchange matrix E; MPET adds a
displacement and a total-pressure field on top.  Both come in an original
and a transformed flavor, where the transformed pressure blocks decouple
through the congruence transformation P.  The MPET system is assembled in
its symmetric-indefinite form (second and third block rows negated) so that
MinRes applies directly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .congruence import CongruenceError, build_exchange_matrix
from .meshfem import (
    DofMap,
    assemble_divergence_p2_p1,
    assemble_elasticity_p2,
    assemble_mass_p1,
    assemble_stiffness_p1,
)

__all__ = [
    "BlockSystem",
    "FemBlocks",
    "assemble_mpt",
    "assemble_mpt_transformed",
    "assemble_mpet",
    "assemble_mpet_transformed",
    "build_mpt_rhs",
    "build_mpet_rhs",
    "transform_rhs",
    "recover_pressures",
    "total_pressure_postprocess",
    "split_vector",
    "export_block_system",
]


class BlockSystem:
    """Sparse blocks arranged on a grid of fields.

    layout        sizes of the fields (MPT: J pressures; MPET: displacement,
                  total pressure, then J pressures)
    blocks        {(i, j): csr}; a block is present iff its transpose partner is
    constrained   {field index: constrained local dof indices}
    sign_negated  field indices whose rows carry a flipped sign (the
                  symmetric-indefinite MPET convention)
    """

    def __init__(self, layout, blocks, constrained=None, sign_negated=(), problem=""):
        self.layout = list(layout)
        self.blocks = dict(blocks)
        self.constrained = dict(constrained or {})
        self.sign_negated = tuple(sign_negated)
        self.problem = problem
        for (i, j), blk in self.blocks.items():
            if blk.shape != (self.layout[i], self.layout[j]):
                raise CongruenceError(
                    f"block ({i}, {j}) has shape {blk.shape}, expected "
                    f"({self.layout[i]}, {self.layout[j]})"
                )
            if (j, i) not in self.blocks:
                raise CongruenceError(f"block ({i}, {j}) lacks its transpose partner")

    @property
    def num_fields(self):
        return len(self.layout)

    @property
    def size(self):
        return sum(self.layout)

    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.layout)])

    def tocsr(self):
        n = self.num_fields
        grid = [[self.blocks.get((i, j)) for j in range(n)] for i in range(n)]
        return sp.bmat(grid, format="csr")

    def constrained_global(self):
        """Global indices of all Dirichlet-eliminated dofs."""
        offs = self.offsets()
        parts = [offs[i] + np.asarray(d) for i, d in sorted(self.constrained.items())]
        if not parts:
            return np.array([], dtype=np.int64)
        return np.sort(np.concatenate(parts)).astype(np.int64)

    def free_global(self):
        mask = np.ones(self.size, dtype=bool)
        mask[self.constrained_global()] = False
        return np.flatnonzero(mask)


def split_vector(x, layout):
    """Cut a flat vector into the segments of a block layout."""
    x = np.asarray(x)
    if x.size != sum(layout):
        raise CongruenceError(f"vector of size {x.size} does not match layout {layout}")
    offs = np.concatenate([[0], np.cumsum(layout)])
    return [x[offs[i]:offs[i + 1]] for i in range(len(layout))]


class FemBlocks:
    """The scalar/vector element matrices one mesh provides, assembled once."""

    def __init__(self, mesh, mu=1.0):
        self.mesh = mesh
        self.mu = float(mu)
        self.p1 = DofMap(mesh, "P1")
        self.p2v = DofMap(mesh, "P2-vector")
        self.stiffness = assemble_stiffness_p1(mesh)          # unit coefficient
        self.mass = assemble_mass_p1(mesh)
        self.elasticity = assemble_elasticity_p2(mesh, mu)    # carries 2*mu
        self.divergence = assemble_divergence_p2_p1(mesh)     # rows P1, cols P2v


def _bc(block, row_dofs=None, col_dofs=None, diag=None):
    """Zero constrained rows/cols of one block; diag also sets unit entries."""
    out = block.tocsr(copy=True)
    if row_dofs is not None and len(row_dofs):
        keep = np.ones(out.shape[0])
        keep[row_dofs] = 0.0
        out = sp.diags(keep) @ out
    if col_dofs is not None and len(col_dofs):
        keep = np.ones(out.shape[1])
        keep[col_dofs] = 0.0
        out = out @ sp.diags(keep)
    if diag is not None and row_dofs is not None and len(row_dofs):
        fixed = np.zeros(out.shape[0])
        fixed[row_dofs] = diag
        out = out + sp.diags(fixed)
    return out.tocsr()


def assemble_mpt(mesh, K, E):
    """Original multi-compartment Darcy system: K_j stiffness on the diagonal
    plus the exchange matrix E tensored with the P1 mass matrix.

    Homogeneous Dirichlet conditions are eliminated for every pressure; the
    result is SPD.
    """
    K = np.atleast_1d(np.asarray(K, dtype=float))
    E = np.asarray(E, dtype=float)
    J = K.size
    if E.shape != (J, J):
        raise CongruenceError(f"E must be {J} x {J} to match {J} conductivities, got {E.shape}")
    if np.any(K <= 0):
        raise CongruenceError(f"conductivities must be positive, got {K}")
    fem = FemBlocks(mesh)
    bdofs = fem.p1.dirichlet_dofs
    npres = fem.p1.ndof
    blocks = {}
    for j in range(J):
        dblk = K[j] * fem.stiffness + E[j, j] * fem.mass
        blocks[(j, j)] = _bc(dblk, bdofs, bdofs, diag=1.0)
        for i in range(J):
            if i == j or E[i, j] == 0.0:
                continue
            blocks[(i, j)] = _bc(E[i, j] * fem.mass, bdofs, bdofs)
    # ensure transpose partners exist even when E is one-sidedly zero
    for (i, j) in list(blocks):
        if (j, i) not in blocks:
            blocks[(j, i)] = blocks[(i, j)].T.tocsr()
    constrained = {j: bdofs for j in range(J)}
    return BlockSystem([npres] * J, blocks, constrained, problem="mpt")


def assemble_mpt_transformed(mesh, result):
    """Decoupled Darcy system in the transformed pressures: block j is
    K~_j stiffness + xi~_j mass, no off-diagonal blocks."""
    fem = FemBlocks(mesh)
    bdofs = fem.p1.dirichlet_dofs
    npres = fem.p1.ndof
    blocks = {}
    for j in range(result.J):
        dblk = result.dK[j] * fem.stiffness + result.dGamma[j] * fem.mass
        blocks[(j, j)] = _bc(dblk, bdofs, bdofs, diag=1.0)
    constrained = {j: bdofs for j in range(result.J)}
    return BlockSystem([npres] * result.J, blocks, constrained, problem="mpt-transformed")


def _mpet_shared_blocks(fem, params):
    """Displacement/total-pressure corner common to both MPET flavors."""
    udofs = fem.p2v.dirichlet_dofs
    blocks = {
        (0, 0): _bc(fem.elasticity, udofs, udofs, diag=1.0),
        (0, 1): _bc(fem.divergence.T.tocsr(), row_dofs=udofs),
        (1, 0): _bc(fem.divergence, col_dofs=udofs),
        (1, 1): (-1.0 / params.lam) * fem.mass,
    }
    return blocks


def assemble_mpet(mesh, params):
    """Time-discrete total-pressure MPET system in symmetric-indefinite form.

    Fields: displacement (vector P2, clamped), total pressure (P1, no
    boundary condition), J network pressures (P1, homogeneous Dirichlet).
    The total-pressure and network-pressure rows are negated so the full
    matrix is symmetric.
    """
    fem = FemBlocks(mesh, mu=params.mu)
    J = params.J
    bdofs = fem.p1.dirichlet_dofs
    blocks = _mpet_shared_blocks(fem, params)
    E = params.exchange_matrix()
    L = params.coupling_matrix()
    coeff = np.diag(params.s) + params.tau * E + L
    for j in range(J):
        c2j = (params.alpha[j] / params.lam) * fem.mass
        blocks[(1, 2 + j)] = _bc(-c2j, col_dofs=bdofs)
        blocks[(2 + j, 1)] = _bc(-c2j, row_dofs=bdofs)
        for i in range(J):
            mat = coeff[i, j] * fem.mass
            if i == j:
                mat = mat + params.tau * params.K[j] * fem.stiffness
                blocks[(2 + i, 2 + j)] = _bc(-mat, bdofs, bdofs, diag=-1.0)
            elif coeff[i, j] != 0.0:
                blocks[(2 + i, 2 + j)] = _bc(-mat, bdofs, bdofs)
    for (i, j) in list(blocks):
        if (j, i) not in blocks:
            blocks[(j, i)] = blocks[(i, j)].T.tocsr()
    layout = [fem.p2v.ndof, fem.p1.ndof] + [fem.p1.ndof] * J
    constrained = {0: fem.p2v.dirichlet_dofs}
    constrained.update({2 + j: bdofs for j in range(J)})
    return BlockSystem(layout, blocks, constrained, sign_negated=tuple(range(1, 2 + J)),
                       problem="mpet")


def assemble_mpet_transformed(mesh, params, result):
    """MPET system in the transformed pressures p~ = P^{-1}-mapped variables.

    The exchange/coupling operator decouples into gamma~_j mass terms; with
    the storage-exclusive transform and s != 0, the leftover P^T S P mass
    coupling stays (dense across pressure blocks) and is stored explicitly.
    """
    fem = FemBlocks(mesh, mu=params.mu)
    J = params.J
    if result.J != J:
        raise CongruenceError(f"transform is {result.J}-network, parameters are {J}-network")
    bdofs = fem.p1.dirichlet_dofs
    blocks = _mpet_shared_blocks(fem, params)
    alpha_t = result.alpha_tilde
    if alpha_t is None:
        alpha_t = result.P.T @ params.alpha
    coeff = np.diag(result.dGamma).copy()
    if not getattr(result, "includes_storage", False) and np.any(params.s != 0.0):
        coeff = coeff + result.P.T @ (params.s[:, None] * result.P)
    for j in range(J):
        c2j = (alpha_t[j] / params.lam) * fem.mass
        blocks[(1, 2 + j)] = _bc(-c2j, col_dofs=bdofs)
        blocks[(2 + j, 1)] = _bc(-c2j, row_dofs=bdofs)
        for i in range(J):
            mat = coeff[i, j] * fem.mass
            if i == j:
                mat = mat + params.tau * result.dK[j] * fem.stiffness
                blocks[(2 + i, 2 + j)] = _bc(-mat, bdofs, bdofs, diag=-1.0)
            elif coeff[i, j] != 0.0:
                blocks[(2 + i, 2 + j)] = _bc(-mat, bdofs, bdofs)
    for (i, j) in list(blocks):
        if (j, i) not in blocks:
            blocks[(j, i)] = blocks[(i, j)].T.tocsr()
    layout = [fem.p2v.ndof, fem.p1.ndof] + [fem.p1.ndof] * J
    constrained = {0: fem.p2v.dirichlet_dofs}
    constrained.update({2 + j: bdofs for j in range(J)})
    return BlockSystem(layout, blocks, constrained, sign_negated=tuple(range(1, 2 + J)),
                       problem="mpet-transformed")


def build_mpt_rhs(mesh, sources):
    """Load segments for constant network sources g_j (one scalar each)."""
    fem = FemBlocks(mesh)
    bdofs = fem.p1.dirichlet_dofs
    ones = np.ones(fem.p1.ndof)
    segments = []
    for g in np.atleast_1d(np.asarray(sources, dtype=float)):
        seg = g * (fem.mass @ ones)
        seg[bdofs] = 0.0
        segments.append(seg)
    return segments


def build_mpet_rhs(mesh, params, sources=None):
    """MPET right-hand side: zero body force, constant sources in the networks.

    sources defaults to 1 in network 1 and 0 elsewhere, the convention used
    by the robustness experiments.  Segments follow the sign convention of
    the assembled system (pressure rows negated carry +g as stated).
    """
    if sources is None:
        sources = np.zeros(params.J)
        sources[0] = 1.0
    fem = FemBlocks(mesh, mu=params.mu)
    segs = [np.zeros(fem.p2v.ndof), np.zeros(fem.p1.ndof)]
    segs.extend(build_mpt_rhs(mesh, sources))
    return segs


def transform_rhs(pressure_segments, P):
    """g~ = (P^T tensor I) g applied to the pressure segments only."""
    P = np.asarray(P, dtype=float)
    J = P.shape[0]
    if len(pressure_segments) != J:
        raise CongruenceError(
            f"expected {J} pressure segments, got {len(pressure_segments)}"
        )
    stacked = np.asarray(pressure_segments)
    return list(np.einsum("ij,iw->jw", P, stacked))


def recover_pressures(transformed_segments, P):
    """p = (P tensor I) p~ mapping transformed pressures back."""
    P = np.asarray(P, dtype=float)
    J = P.shape[0]
    if len(transformed_segments) != J:
        raise CongruenceError(
            f"expected {J} transformed segments, got {len(transformed_segments)}"
        )
    stacked = np.asarray(transformed_segments)
    return list(np.einsum("ji,iw->jw", P, stacked))


def total_pressure_postprocess(mesh, u, pressure_segments, params):
    """L2 projection of lambda*div(u) - alpha . p onto P1.

    For a solved MPET system this reproduces the total-pressure unknown up
    to solver accuracy, since the second block equation states exactly this
    projection identity.
    """
    from scipy.sparse.linalg import spsolve

    fem = FemBlocks(mesh, mu=params.mu)
    alpha_dot_p = np.zeros(fem.p1.ndof)
    for a, seg in zip(params.alpha, pressure_segments):
        alpha_dot_p = alpha_dot_p + a * np.asarray(seg, dtype=float)
    rhs = params.lam * (fem.divergence @ np.asarray(u, dtype=float)) - fem.mass @ alpha_dot_p
    return spsolve(fem.mass.tocsc(), rhs)


def export_block_system(system, path):
    """Coordinate-triplet text export with a block-layout header."""
    coo = system.tocsr().tocoo()
    with open(path, "w") as fh:
        fh.write("layout " + " ".join(str(s) for s in system.layout) + "\n")
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.16e}\n")
