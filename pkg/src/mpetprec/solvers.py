"""Preconditioned MinRes and the block-diagonal preconditioners.

Every preconditioner block is solved exactly through a sparse symmetric
factorization (the role algebraic multigrid plays at scale); MinRes is the
standard two-term Lanczos recurrence with the preconditioner entering
through B-inner products, stopped on the ratio of B-weighted residual
inner products.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .congruence import CongruenceError
from .meshfem import DofMap, assemble_mass_p1, assemble_stiffness_p1
from .systems import BlockSystem, FemBlocks, _bc, split_vector

__all__ = [
    "SolverError",
    "SpdFactor",
    "factorize_spd",
    "BlockDiagPreconditioner",
    "build_precond_mpt_naive",
    "build_precond_mpt_transformed",
    "build_precond_mpet_naive",
    "build_precond_mpet_transformed",
    "SolveReport",
    "minres",
]


class SolverError(Exception):
    """Raised when a factorization or solver contract is violated."""


class SpdFactor:
    """Exact sparse factorization of one SPD block.

    Uses a symmetric-mode LU with diagonal pivoting; any nonpositive pivot
    means the block is not SPD and is reported as such.
    """

    def __init__(self, matrix, name="block"):
        matrix = sp.csr_matrix(matrix)
        self.shape = matrix.shape
        self.name = name
        if matrix.shape[0] != matrix.shape[1]:
            raise SolverError(f"{name}: expected a square block, got {matrix.shape}")
        scale = np.abs(matrix).max() if matrix.nnz else 0.0
        asym = np.abs(matrix - matrix.T).max() if matrix.nnz else 0.0
        if asym > 1e-12 * max(scale, 1e-300):
            raise SolverError(f"{name}: block is not symmetric (|A - A^T| = {asym:.3e})")
        try:
            self._lu = spla.splu(
                matrix.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as err:
            raise SolverError(f"{name}: block not SPD ({err})") from err
        pivots = self._lu.U.diagonal()
        if np.any(pivots <= 0):
            raise SolverError(
                f"{name}: block not SPD (nonpositive pivot "
                f"{pivots.min():.3e} at index {int(np.argmin(pivots))})"
            )

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        return self._lu.solve(b)


def factorize_spd(block, name="block"):
    """Factor one symmetric positive definite sparse block for exact solves."""
    return SpdFactor(block, name=name)


class BlockDiagPreconditioner:
    """Exact block-diagonal preconditioner: one SPD factorization per field.

    matrices    the inner operators B^{-1} blockwise (what the norm measures)
    solvers     their factorizations; apply() maps a residual to B r
    """

    def __init__(self, matrices, description="", names=None):
        self.matrices = [sp.csr_matrix(m) for m in matrices]
        self.layout = [m.shape[0] for m in self.matrices]
        names = names or [f"block {i}" for i in range(len(self.matrices))]
        self.solvers = [factorize_spd(m, name=n) for m, n in zip(self.matrices, names)]
        self.description = description

    @property
    def size(self):
        return sum(self.layout)

    def apply(self, x):
        """B x, solving each diagonal block exactly."""
        segs = split_vector(np.asarray(x, dtype=float), self.layout)
        return np.concatenate([s.solve(seg) for s, seg in zip(self.solvers, segs)])

    def inner_matvec(self, x):
        """B^{-1} x, the norm operator the preconditioner realizes."""
        segs = split_vector(np.asarray(x, dtype=float), self.layout)
        return np.concatenate([m @ seg for m, seg in zip(self.matrices, segs)])

    def inner_csr(self):
        return sp.block_diag(self.matrices, format="csr")


def build_precond_mpt_naive(system):
    """Inverses of the diagonal blocks of the untransformed Darcy system."""
    J = system.num_fields
    mats = [system.blocks[(j, j)] for j in range(J)]
    return BlockDiagPreconditioner(
        mats,
        description="mpt naive: diagonal blocks of the coupled system",
        names=[f"pressure block {j}" for j in range(J)],
    )


def _clamped_nonneg(value, scale, name):
    """Zero out roundoff-negative diagonal coefficients; reject real ones."""
    if value < -1e-12 * max(scale, 1.0):
        raise SolverError(f"{name} = {value:.3e} < 0")
    return max(value, 0.0)


def build_precond_mpt_transformed(mesh, result):
    """Decoupled Darcy preconditioner: block j solves K~_j stiffness + xi~_j mass."""
    stiff = assemble_stiffness_p1(mesh)
    mass = assemble_mass_p1(mesh)
    bdofs = DofMap(mesh, "P1").dirichlet_dofs
    gscale = float(np.abs(result.dGamma).max())
    mats = []
    for j in range(result.J):
        if result.dK[j] <= 0:
            raise SolverError(f"transformed conductivity K~_{j} = {result.dK[j]:.3e} <= 0")
        g = _clamped_nonneg(result.dGamma[j], gscale, f"transformed exchange xi~_{j}")
        mats.append(_bc(result.dK[j] * stiff + g * mass, bdofs, bdofs, diag=1.0))
    return BlockDiagPreconditioner(
        mats,
        description="mpt transformed: decoupled stiffness+mass blocks",
        names=[f"transformed pressure block {j}" for j in range(result.J)],
    )


def build_precond_mpet_naive(system, params):
    """Direct extension of the single-network preconditioner: elasticity,
    (2 mu)^{-1}-weighted total-pressure mass, and the diagonal entries of
    the pressure-pressure operator."""
    J = system.num_fields - 2
    mats = [system.blocks[(0, 0)]]
    # system block (1,1) holds -mass/lambda and carries no boundary condition
    mats.append((-params.lam / (2.0 * params.mu)) * system.blocks[(1, 1)])
    for j in range(J):
        mats.append(-system.blocks[(2 + j, 2 + j)])
    names = ["elasticity", "total pressure"] + [f"pressure block {j}" for j in range(J)]
    return BlockDiagPreconditioner(
        mats, description="mpet naive: blockwise diagonal of the coupled system",
        names=names,
    )


def build_precond_mpet_transformed(mesh, params, result):
    """Parameter-robust MPET preconditioner: elasticity, (2 mu)^{-1} mass,
    then tau*K~_j stiffness + gamma~_j mass per transformed pressure."""
    fem = FemBlocks(mesh, mu=params.mu)
    udofs = fem.p2v.dirichlet_dofs
    bdofs = fem.p1.dirichlet_dofs
    mats = [
        _bc(fem.elasticity, udofs, udofs, diag=1.0),
        (1.0 / (2.0 * params.mu)) * fem.mass,
    ]
    gscale = float(np.abs(result.dGamma).max())
    for j in range(result.J):
        g = _clamped_nonneg(result.dGamma[j], gscale, f"gamma~_{j}")
        blk = params.tau * result.dK[j] * fem.stiffness + g * fem.mass
        mats.append(_bc(blk, bdofs, bdofs, diag=1.0))
    names = ["elasticity", "total pressure"] + [
        f"transformed pressure block {j}" for j in range(result.J)
    ]
    return BlockDiagPreconditioner(
        mats, description="mpet transformed: decoupled parameter-robust blocks",
        names=names,
    )


class SolveReport:
    """Iteration record of one MinRes run.

    residual_history holds the preconditioned residual norms
    sqrt((B r_k, r_k)); convergence is judged on the squared ratio
    (B r_k, r_k) / (B r_0, r_0) against ratio_tol.
    """

    def __init__(self, iterations, residual_history, converged, seed, wall_time,
                 ratio_tol):
        self.iterations = int(iterations)
        self.residual_history = np.asarray(residual_history, dtype=float)
        self.converged = bool(converged)
        self.seed = seed
        self.wall_time = float(wall_time)
        self.ratio_tol = float(ratio_tol)

    @property
    def final_ratio(self):
        h = self.residual_history
        if h.size == 0 or h[0] == 0.0:
            return 0.0
        return float((h[-1] / h[0]) ** 2)

    def __repr__(self):
        return (
            f"SolveReport(iterations={self.iterations}, converged={self.converged}, "
            f"final_ratio={self.final_ratio:.3e}, wall_time={self.wall_time:.3f}s)"
        )


def minres(A, B, b, tol=1e-3, maxit=5000, seed=0, x0=None):
    """Preconditioned MinRes for symmetric A with SPD preconditioner B.

    Stops at the first iterate with (B r_k, r_k)/(B r_0, r_0) <= tol^2,
    i.e. tol bounds the ratio of preconditioned residual norms.  A may be a
    BlockSystem or any scipy sparse matrix; B anything with an apply()
    method (or None for the identity).  x0 defaults to a seeded standard
    normal start, the convention of the robustness experiments.  Hitting
    maxit returns converged=False rather than raising, so parameter sweeps
    can record the failure.
    """
    if isinstance(A, BlockSystem):
        A = A.tocsr()
    A = sp.csr_matrix(A)
    n = A.shape[0]
    b = np.asarray(b, dtype=float)
    if b.size != n:
        raise CongruenceError(f"rhs size {b.size} does not match system size {n}")
    if not (0.0 < tol < 1.0):
        raise SolverError(f"tol must lie in (0, 1), got {tol}")
    apply_b = (lambda r: r) if B is None else B.apply

    t0 = time.perf_counter()
    if x0 is None:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(n)
    else:
        x = np.asarray(x0, dtype=float).copy()

    r1 = b - A @ x
    y = apply_b(r1)
    beta1_sq = float(r1 @ y)
    if beta1_sq < 0:
        raise SolverError("preconditioner is not positive definite on the residual")
    beta1 = np.sqrt(beta1_sq)
    history = [beta1]
    if beta1 == 0.0:
        return x, SolveReport(0, history, True, seed, time.perf_counter() - t0, tol * tol)

    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs = -1.0
    sn = 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    eps = np.finfo(float).eps

    converged = False
    itn = 0
    while itn < maxit:
        itn += 1
        v = y / beta
        y = A @ v
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = apply_b(r2)
        oldb = beta
        beta_sq = float(r2 @ y)
        if beta_sq < 0:
            raise SolverError("preconditioner lost positive definiteness (Lanczos)")
        beta = np.sqrt(beta_sq)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        history.append(phibar)
        if phibar <= tol * beta1:
            converged = True
            break
        if beta <= 1e-300:
            # invariant subspace exhausted: the residual cannot improve further
            converged = phibar <= tol * beta1
            break

    return x, SolveReport(itn, history, converged, seed, time.perf_counter() - t0, tol * tol)
