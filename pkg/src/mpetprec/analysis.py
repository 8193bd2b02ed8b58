"""Spectral verification of the preconditioner robustness claims.

The theory bounds the condition number of the preconditioned operator
independently of the material parameters; the discrete check computes the
generalized eigenvalues A x = theta B^{-1} x (all of them densely on small
meshes, extreme Ritz estimates via a B-inner-product Lanczos otherwise)
and tabulates kappa = max|theta| / min|theta| over a parameter grid.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as dla

from .congruence import MpetParameters, transform_parameters
from .meshfem import build_unit_square_mesh
from .solvers import (
    build_precond_mpet_naive,
    build_precond_mpet_transformed,
    minres,
)
from .systems import (
    BlockSystem,
    assemble_mpet,
    assemble_mpet_transformed,
    build_mpet_rhs,
)

__all__ = [
    "AnalysisError",
    "SpectrumReport",
    "RobustnessRow",
    "preconditioned_spectrum_dense",
    "preconditioned_spectrum_lanczos",
    "admissibility",
    "robustness_table",
]

DENSE_SIZE_CAP = 3000

# Lemma hypotheses realized as checkable inequalities: 2*mu <= M0*lambda with
# the M0 = 1 convention, and s_j <= STORAGE_SLACK * gamma~_j.
ADMISSIBLE_M0 = 1.0
STORAGE_SLACK = 10.0


class AnalysisError(Exception):
    """Raised on invalid spectrum computations."""


class SpectrumReport:
    """Extreme absolute generalized eigenvalues of one preconditioned operator."""

    def __init__(self, eig_min, eig_max, N=None, parameters=None, estimate=False,
                 breakdown=False):
        if eig_min <= 0:
            raise AnalysisError(f"preconditioned operator is singular: min|theta| = {eig_min:.3e}")
        self.eig_min = float(eig_min)
        self.eig_max = float(eig_max)
        self.N = N
        self.parameters = parameters
        self.estimate = bool(estimate)
        self.breakdown = bool(breakdown)

    @property
    def kappa(self):
        return self.eig_max / self.eig_min

    def __repr__(self):
        tag = "~" if self.estimate else ""
        return (
            f"SpectrumReport(eig_min={self.eig_min:.4e}, eig_max={self.eig_max:.4e}, "
            f"kappa{tag}={self.kappa:.4g})"
        )


def _system_matrix_and_free(A):
    if isinstance(A, BlockSystem):
        return A.tocsr(), A.free_global()
    import scipy.sparse as sp

    A = sp.csr_matrix(A)
    return A, np.arange(A.shape[0])


def preconditioned_spectrum_dense(A, precond, size_cap=DENSE_SIZE_CAP, N=None,
                                  parameters=None):
    """All generalized eigenvalues of A x = theta B^{-1} x, computed densely.

    Dirichlet-eliminated dofs are excluded so the identity rows do not
    pollute the extremes.  Refuses systems above size_cap unknowns; use the
    Lanczos estimator beyond that.
    """
    Acsr, free = _system_matrix_and_free(A)
    if free.size > size_cap:
        raise AnalysisError(
            f"{free.size} unknowns exceed the dense cap {size_cap}; "
            "use preconditioned_spectrum_lanczos"
        )
    Ad = Acsr[np.ix_(free, free)].toarray()
    Md = precond.inner_csr()[np.ix_(free, free)].toarray()
    theta = dla.eigh(Ad, Md, eigvals_only=True)
    absv = np.abs(theta)
    return SpectrumReport(absv.min(), absv.max(), N=N, parameters=parameters)


def preconditioned_spectrum_lanczos(A, precond, krylov_dim=60, seed=0, N=None,
                                    parameters=None):
    """Extreme-eigenvalue estimates from a B-inner-product Lanczos sweep.

    Runs the Lanczos recurrence for T = B A in the B^{-1} inner product with
    full reorthogonalization; the extreme Ritz values of the tridiagonal
    estimate the extreme generalized eigenvalues.  A zero continuation norm
    (invariant subspace) returns the partial estimate with the breakdown
    flag set.
    """
    if krylov_dim < 20:
        raise AnalysisError(f"krylov_dim must be at least 20, got {krylov_dim}")
    Acsr, free = _system_matrix_and_free(A)
    Minner = precond.inner_csr()

    nfull = Acsr.shape[0]
    mask = np.zeros(nfull, dtype=bool)
    mask[free] = True
    rng = np.random.default_rng(seed)

    def matvec_T(v):
        return precond.apply(Acsr @ v)

    def minner_vec(v):
        return Minner @ v

    v = rng.standard_normal(nfull)
    v[~mask] = 0.0
    mv = minner_vec(v)
    nrm = np.sqrt(v @ mv)
    v = v / nrm
    mv = mv / nrm

    m = min(krylov_dim, free.size)
    V = np.zeros((m, nfull))
    MV = np.zeros((m, nfull))
    alphas = []
    betas = []
    breakdown = False
    v_prev = np.zeros(nfull)
    beta_prev = 0.0
    k = 0
    while k < m:
        V[k] = v
        MV[k] = mv
        w = matvec_T(v)
        w[~mask] = 0.0
        alpha = float(w @ mv)
        alphas.append(alpha)
        w = w - alpha * v - beta_prev * v_prev
        # full reorthogonalization in the B^{-1} inner product
        coeffs = MV[: k + 1] @ w
        w = w - V[: k + 1].T @ coeffs
        mw = minner_vec(w)
        beta = float(np.sqrt(max(w @ mw, 0.0)))
        k += 1
        if k == m:
            break
        if beta <= 1e-12 * max(abs(alpha), 1.0):
            breakdown = True
            break
        betas.append(beta)
        v_prev = v
        beta_prev = beta
        v = w / beta
        mv = mw / beta
    ritz = dla.eigh_tridiagonal(np.asarray(alphas), np.asarray(betas),
                                eigvals_only=True)
    absv = np.abs(ritz)
    return SpectrumReport(absv.min(), absv.max(), N=N, parameters=parameters,
                          estimate=True, breakdown=breakdown)


def admissibility(params, include_storage=False):
    """Check the spectral-equivalence hypotheses for one parameter point.

    Returns (admissible, storage_ratio): the M0 = 1 reading of
    2*mu <= M0*lambda, plus s_j bounded by a factor of gamma~_j (the
    storage-inclusive transform absorbs storage, making the second
    condition automatic).
    """
    result = transform_parameters(params, include_storage=include_storage)
    lame_ok = 2.0 * params.mu <= ADMISSIBLE_M0 * params.lam * (1 + 1e-12)
    if include_storage:
        return lame_ok, 0.0
    ratios = []
    for sj, gj in zip(params.s, result.dGamma):
        if sj == 0.0:
            ratios.append(0.0)
        elif gj <= 0.0:
            ratios.append(np.inf)
        else:
            ratios.append(sj / gj)
    ratio = float(max(ratios)) if ratios else 0.0
    return lame_ok and ratio <= STORAGE_SLACK, ratio


class RobustnessRow:
    """One grid point of a robustness table: solve plus spectrum."""

    def __init__(self, N, params, precond_kind, include_storage, solve_report,
                 spectrum, admissible, storage_ratio):
        self.N = N
        self.params = params
        self.precond_kind = precond_kind
        self.include_storage = include_storage
        self.solve_report = solve_report
        self.spectrum = spectrum
        self.admissible = admissible
        self.storage_ratio = storage_ratio


def robustness_table(mesh_sizes, parameter_grid, precond_kind="transformed",
                     include_storage=False, tol=1e-6, maxit=5000, seed=0,
                     size_cap=DENSE_SIZE_CAP, krylov_dim=60, compute_spectrum=True):
    """Solve + spectrum rows over parameter points x mesh sizes.

    parameter_grid is an iterable of MpetParameters; rows appear in grid
    order with mesh sizes innermost.  Non-converged solves are recorded,
    not raised.  kappa comes from the dense eigensolver when the reduced
    size permits and from the Lanczos estimator otherwise.
    """
    parameter_grid = list(parameter_grid)
    if not parameter_grid:
        raise AnalysisError("parameter grid is empty")
    rows = []
    mesh_cache = {}
    for params in parameter_grid:
        for N in mesh_sizes:
            if N not in mesh_cache:
                mesh_cache[N] = build_unit_square_mesh(N)
            mesh = mesh_cache[N]
            if precond_kind == "transformed":
                result = transform_parameters(params, include_storage=include_storage)
                system = assemble_mpet_transformed(mesh, params, result)
                precond = build_precond_mpet_transformed(mesh, params, result)
            elif precond_kind == "naive":
                system = assemble_mpet(mesh, params)
                precond = build_precond_mpet_naive(system, params)
            else:
                raise AnalysisError(f"unknown preconditioner kind {precond_kind!r}")
            rhs = np.concatenate(build_mpet_rhs(mesh, params))
            _, report = minres(system, precond, rhs, tol=np.sqrt(tol), maxit=maxit,
                               seed=seed)
            spectrum = None
            if compute_spectrum:
                if system.free_global().size <= size_cap:
                    spectrum = preconditioned_spectrum_dense(
                        system, precond, size_cap=size_cap, N=N, parameters=params)
                else:
                    spectrum = preconditioned_spectrum_lanczos(
                        system, precond, krylov_dim=krylov_dim, seed=seed, N=N,
                        parameters=params)
            admissible, ratio = admissibility(params, include_storage=include_storage)
            rows.append(RobustnessRow(N, params, precond_kind, include_storage,
                                      report, spectrum, admissible, ratio))
    return rows
