"""Dense symmetric linear algebra for the pressure-variable transformation.

Builds the J x J coefficient matrices of the multi-network equations
(conductivity K, inter-network exchange E, elastic coupling L) and computes
an invertible P that diagonalizes a positive diagonal K and a PSD M
simultaneously by congruence: P^T K P and P^T M P both diagonal.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "CongruenceError",
    "CongruenceResult",
    "MpetParameters",
    "symmetric_eig",
    "build_exchange_matrix",
    "build_coupling_matrix",
    "eigenvalue_cluster",
    "diagonalize_by_congruence",
    "transform_parameters",
    "read_matrix",
    "write_matrix",
    "symmetrize",
]

# Relative eigenvalue gap below which two eigenvalues of K^{-1}M are treated
# as one multiple eigenvalue and their columns re-diagonalized blockwise.
DEFAULT_CLUSTER_RTOL = 1e-8

# Off-diagonal mass of P^T K P / P^T M P relative to the diagonal scale
# accepted as "diagonal".
DIAG_RTOL = 1e-10


class CongruenceError(Exception):
    """Raised when validation or diagonalization of the J x J pencil fails."""


def symmetrize(a):
    """Return 0.5*(A + A^T) as a float array, checking squareness."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise CongruenceError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


class MpetParameters:
    """Physical scalars and coupling tables of a J-network poroelastic medium.

    mu, lam        Lame parameters of the solid (kPa), both > 0
    alpha          J Biot-Willis coefficients in (0, 1], sum <= 1
    s              J storage coefficients (1/kPa), >= 0
    K              J hydraulic conductivities (mm^2/kPa/s), > 0
    xi             J x J symmetric exchange table (1/kPa/s), zero diagonal,
                   xi[i, j] is the transfer coefficient between networks i, j
    tau            time-step length (s), > 0
    """

    def __init__(self, mu, lam, alpha, s, K, xi=None, tau=1.0):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        J = alpha.size
        s = np.broadcast_to(np.asarray(s, dtype=float), (J,)).copy()
        K = np.broadcast_to(np.asarray(K, dtype=float), (J,)).copy()
        if xi is None:
            xi = np.zeros((J, J))
        xi = np.asarray(xi, dtype=float)
        if np.isscalar(mu) is False:
            mu = float(mu)
        self.J = J
        self.mu = float(mu)
        self.lam = float(lam)
        self.alpha = alpha
        self.s = s
        self.K = K
        self.xi = xi
        self.tau = float(tau)
        self._validate()

    def _validate(self):
        J = self.J
        if self.mu <= 0:
            raise CongruenceError(f"mu must be positive, got {self.mu}")
        if self.lam <= 0:
            raise CongruenceError(f"lambda must be positive, got {self.lam}")
        if self.tau <= 0:
            raise CongruenceError(f"tau must be positive, got {self.tau}")
        if np.any(self.K <= 0):
            raise CongruenceError(f"conductivities must be positive, got {self.K}")
        if np.any(self.s < 0):
            raise CongruenceError(f"storage coefficients must be nonnegative, got {self.s}")
        if np.any(self.alpha <= 0) or np.any(self.alpha > 1):
            raise CongruenceError(f"Biot-Willis coefficients must lie in (0, 1], got {self.alpha}")
        if self.alpha.sum() > 1 + 1e-12:
            raise CongruenceError(f"sum of Biot-Willis coefficients exceeds 1: {self.alpha.sum()}")
        if self.xi.shape != (J, J):
            raise CongruenceError(f"xi must be {J} x {J}, got shape {self.xi.shape}")
        if np.any(np.abs(np.diag(self.xi)) > 0):
            raise CongruenceError("xi must have a zero diagonal")
        if not np.array_equal(self.xi, self.xi.T):
            raise CongruenceError("xi must be symmetric")
        if np.any(self.xi < 0):
            raise CongruenceError("xi entries must be nonnegative")

    def exchange_matrix(self):
        return build_exchange_matrix(self.xi)

    def coupling_matrix(self):
        return build_coupling_matrix(self.alpha, self.lam)

    def __repr__(self):
        return (
            f"MpetParameters(J={self.J}, mu={self.mu}, lam={self.lam}, "
            f"alpha={self.alpha.tolist()}, s={self.s.tolist()}, K={self.K.tolist()}, "
            f"xi_max={self.xi.max() if self.J > 1 else 0.0}, tau={self.tau})"
        )


class CongruenceResult:
    """Transformation P with the diagonalized coefficient vectors.

    P                  J x J invertible transformation (columns = new variables)
    dK                 diagonal of P^T K P
    dGamma             diagonal of P^T M P (M = E for the rigid problem,
                       tau*E + L or S + tau*E + L for the poroelastic one)
    alpha_tilde        P^T alpha, or None when no alpha was involved
    eigenvalues        eigenvalues of K^{-1} M in the column order of P
    column_normalized  whether columns of P have unit Euclidean norm
    """

    def __init__(self, P, dK, dGamma, alpha_tilde=None, eigenvalues=None,
                 column_normalized=True, mode="paper", includes_storage=False):
        self.P = np.asarray(P, dtype=float)
        self.dK = np.asarray(dK, dtype=float)
        self.dGamma = np.asarray(dGamma, dtype=float)
        self.alpha_tilde = None if alpha_tilde is None else np.asarray(alpha_tilde, float)
        self.eigenvalues = None if eigenvalues is None else np.asarray(eigenvalues, float)
        self.column_normalized = bool(column_normalized)
        self.mode = mode
        self.includes_storage = bool(includes_storage)

    @property
    def J(self):
        return self.P.shape[0]

    def check(self, K, M, lam=None):
        """Validate the diagonalization contract against the original pencil."""
        K = _as_diagonal_matrix(K)
        M = np.asarray(M, dtype=float)
        sv = np.linalg.svd(self.P, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise CongruenceError(
                f"transformation is numerically singular: sigma_min/sigma_max = {sv[-1] / sv[0]:.2e}"
            )
        for name, A in (("K", K), ("M", M)):
            T = self.P.T @ A @ self.P
            scale = max(np.abs(np.diag(T)).max(), np.abs(A).max() * 1e-8)
            off = _offdiag_max(T)
            if off > DIAG_RTOL * scale:
                raise CongruenceError(
                    f"P^T {name} P is not diagonal: max offdiag {off:.3e} vs scale {scale:.3e}"
                )
        if lam is not None and self.alpha_tilde is not None:
            # gamma_j >= alpha_j~^2/lambda up to roundoff of the triple products
            slack = 1e-12 * max(1.0, float(np.abs(self.dGamma).max()))
            bound = self.alpha_tilde**2 / lam
            if np.any(self.dGamma < bound - slack):
                j = int(np.argmax(bound - self.dGamma))
                raise CongruenceError(
                    f"gamma_tilde[{j}] = {self.dGamma[j]:.6e} violates the "
                    f"lower bound alpha_tilde^2/lambda = {bound[j]:.6e}"
                )
        return self


def _offdiag_max(a):
    b = a.copy()
    np.fill_diagonal(b, 0.0)
    return np.abs(b).max() if b.size else 0.0


def _as_diagonal_matrix(K):
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        return np.diag(K)
    off = _offdiag_max(K)
    if off != 0.0:
        raise CongruenceError(f"K must be diagonal, max offdiagonal entry {off:.3e}")
    return K


def symmetric_eig(a, max_sweeps=60):
    """Eigendecomposition of a dense symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, orthonormal eigenvector columns).  Meant
    for the tiny J x J matrices of this package; raises CongruenceError with
    the remaining off-diagonal norm if the sweep cap is hit.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise CongruenceError(f"expected a square matrix, got shape {a.shape}")
    asym = np.abs(a - a.T).max() if a.size else 0.0
    if asym > 1e-12 * max(1.0, np.abs(a).max()):
        raise CongruenceError(f"matrix is not symmetric: max |A - A^T| = {asym:.3e}")
    n = a.shape[0]
    A = 0.5 * (a + a.T)
    V = np.eye(n)
    norm_a = np.linalg.norm(A)
    if n == 1:
        return np.array([A[0, 0]]), np.array([[1.0]])
    def offdiag_norm(mat):
        # summed directly over off-diagonal entries: the ||A||^2 - ||diag||^2
        # shortcut cancels catastrophically once the mass drops below sqrt(eps)
        off = mat.copy()
        np.fill_diagonal(off, 0.0)
        return np.linalg.norm(off)

    for _ in range(max_sweeps):
        if offdiag_norm(A) <= 1e-14 * max(norm_a, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp = A[:, p].copy()
                rq = A[:, q].copy()
                A[:, p] = c * rp - s * rq
                A[:, q] = s * rp + c * rq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
    else:
        raise CongruenceError(
            f"Jacobi iteration did not converge in {max_sweeps} sweeps; "
            f"remaining off-diagonal norm {offdiag_norm(A):.3e}"
        )
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def build_exchange_matrix(xi):
    """Exchange matrix E from the pairwise transfer table xi.

    E[j, j] = sum_i xi[j, i] and E[i, j] = -xi[i, j] off the diagonal, which
    makes E symmetric positive semi-definite with row sums zero.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 2 or xi.shape[0] != xi.shape[1]:
        raise CongruenceError(f"xi must be square, got shape {xi.shape}")
    if not np.array_equal(xi, xi.T):
        raise CongruenceError("xi must be symmetric")
    if np.any(xi < 0):
        raise CongruenceError("xi entries must be nonnegative")
    if np.any(np.abs(np.diag(xi)) > 0):
        raise CongruenceError("xi must have a zero diagonal")
    E = -xi.copy()
    np.fill_diagonal(E, xi.sum(axis=1))
    return E


def build_coupling_matrix(alpha, lam):
    """Rank-one elastic coupling matrix L[i, j] = alpha_i * alpha_j / lambda."""
    if lam <= 0:
        raise CongruenceError(f"lambda must be positive, got {lam}")
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    return np.outer(alpha, alpha) / float(lam)


def eigenvalue_cluster(eigenvalues, rel_tol=DEFAULT_CLUSTER_RTOL):
    """Partition eigenvalue indices into clusters of (numerically) equal values.

    Two values land in one cluster iff |a - b| <= rel_tol * max(1, |a|, |b|),
    closed transitively.  Returns the clusters ordered by first member.
    """
    w = np.atleast_1d(np.asarray(eigenvalues, dtype=float))
    if not np.all(np.isfinite(w)):
        raise CongruenceError("eigenvalues must be finite")
    n = w.size
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(w[i] - w[j]) <= rel_tol * max(1.0, abs(w[i]), abs(w[j])):
                parent[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def _fix_column_signs(P):
    """Flip column signs so each column's largest-magnitude entry is >= 0."""
    P = P.copy()
    for j in range(P.shape[1]):
        k = int(np.argmax(np.abs(P[:, j])))
        if P[k, j] < 0:
            P[:, j] = -P[:, j]
    return P


def _realify_eigenvectors(w, V, scale):
    """Collapse spurious tiny-imaginary conjugate pairs to a real basis.

    A symmetric-definite pencil has a real spectrum; the QR iteration may
    still return an almost-real conjugate pair for a degenerate eigenvalue.
    The real and imaginary parts of one member span the invariant subspace.
    """
    if not np.iscomplexobj(w):
        return w.astype(float), V.astype(float)
    tol = 1e-8 * max(scale, 1.0)
    if np.abs(w.imag).max() > tol:
        raise CongruenceError(
            f"eigenvalues of K^-1 M have significant imaginary parts "
            f"(max {np.abs(w.imag).max():.3e}); the pencil is not symmetric PSD"
        )
    wr = w.real.copy()
    Vr = V.real.copy()
    j = 0
    n = w.size
    while j < n - 1:
        if w[j].imag != 0.0 and np.allclose(w[j], np.conj(w[j + 1])):
            re = V[:, j].real
            im = V[:, j].imag
            if np.linalg.norm(im) > 1e-14 * max(np.linalg.norm(re), 1e-300):
                Vr[:, j] = re
                Vr[:, j + 1] = im
            j += 2
        else:
            j += 1
    return wr, Vr


def diagonalize_by_congruence(K, M, mode="paper", normalize_columns=True,
                              cluster_rtol=DEFAULT_CLUSTER_RTOL):
    """Invertible P with P^T K P and P^T M P simultaneously diagonal.

    K is positive diagonal (vector or diagonal matrix), M symmetric PSD.

    mode "paper": eigenvector matrix of C = K^{-1} M in the order returned
    by the QR iteration; clusters of repeated eigenvalues leave P^T K P only
    block-diagonal, and each such block is closed out by its own symmetric
    eigendecomposition.  mode "spectral": P = K^{-1/2} V with V from the
    symmetric form K^{-1/2} M K^{-1/2}, eigenvalues ascending; always valid,
    serves as the cross-check oracle.

    Note: for an eigenvalue of multiplicity > 1 the basis within its
    eigenspace is not unique, so P (and the corresponding entries of the
    diagonals) are deterministic only for a fixed LAPACK build.
    """
    k = np.diag(_as_diagonal_matrix(K)).copy()
    if np.any(k <= 0):
        raise CongruenceError(f"K must have strictly positive diagonal entries, got {k}")
    M = np.asarray(M, dtype=float)
    J = k.size
    if M.shape != (J, J):
        raise CongruenceError(f"M must be {J} x {J}, got shape {M.shape}")
    asym = np.abs(M - M.T).max() if M.size else 0.0
    if asym > 1e-12 * max(1.0, np.abs(M).max()):
        raise CongruenceError(f"M is not symmetric: max |M - M^T| = {asym:.3e}")
    M = 0.5 * (M + M.T)

    if mode == "spectral":
        isq = 1.0 / np.sqrt(k)
        Chat = isq[:, None] * M * isq[None, :]
        w, V = symmetric_eig(0.5 * (Chat + Chat.T))
        P = isq[:, None] * V
    elif mode == "paper":
        if np.abs(M).max() == 0.0:
            # C = 0: every basis works; the identity is the convention
            P = np.eye(J)
            w = np.zeros(J)
        else:
            C = M / k[:, None]
            w, V = np.linalg.eig(C)
            w, P = _realify_eigenvectors(w, V, np.abs(w).max())
            P = P / np.linalg.norm(P, axis=0)
            for cluster in eigenvalue_cluster(w, cluster_rtol):
                if len(cluster) == 1:
                    continue
                idx = np.asarray(cluster)
                block = P[:, idx].T @ (k[:, None] * P[:, idx])
                _, R = symmetric_eig(0.5 * (block + block.T))
                P[:, idx] = P[:, idx] @ R
    else:
        raise CongruenceError(f"unknown mode {mode!r}; expected 'paper' or 'spectral'")

    if normalize_columns:
        norms = np.linalg.norm(P, axis=0)
        if np.any(norms == 0):
            raise CongruenceError("produced a zero column; pencil is defective")
        P = P / norms
    P = _fix_column_signs(P)

    dK = np.einsum("ij,i,ik->jk", P, k, P).diagonal().copy()
    TM = P.T @ M @ P
    dM = np.diag(TM).copy()

    result = CongruenceResult(P, dK, dM, eigenvalues=w,
                              column_normalized=normalize_columns, mode=mode)
    try:
        result.check(k, M)
    except CongruenceError as err:
        raise CongruenceError(
            f"off-diagonal residual above tolerance after block refinement: {err}"
        ) from err
    return result


def transform_parameters(params, include_storage=False, mode="paper",
                         normalize_columns=True):
    """Congruence transform of an MpetParameters set.

    Diagonalizes K against tau*E + L (the storage matrix S stays out of the
    default pencil; pass include_storage=True to diagonalize against
    S + tau*E + L instead, the variant for non-degenerate storage).
    Returns the CongruenceResult carrying P, K~, Gamma~ and alpha~ = P^T alpha.
    """
    E = params.exchange_matrix()
    L = params.coupling_matrix()
    M = params.tau * E + L
    if include_storage:
        M = M + np.diag(params.s)
    result = diagonalize_by_congruence(params.K, M, mode=mode,
                                       normalize_columns=normalize_columns)
    result.alpha_tilde = result.P.T @ params.alpha
    result.includes_storage = bool(include_storage)
    result.check(params.K, M, lam=params.lam)
    return result


def read_matrix(path):
    """Read the plain-text matrix format: first line n, then n rows of n values."""
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens:
        raise CongruenceError(f"{path}: empty matrix file")
    try:
        n = int(tokens[0])
        values = [float(t) for t in tokens[1:]]
    except ValueError as err:
        raise CongruenceError(f"{path}: malformed matrix file: {err}") from err
    if n <= 0 or len(values) != n * n:
        raise CongruenceError(
            f"{path}: malformed matrix file: expected {n}*{n} entries "
            f"after the header, got {len(values)}"
        )
    return np.array(values, dtype=float).reshape(n, n)


def write_matrix(path, a):
    """Write a matrix in the plain-text format with 17 significant digits."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{a.shape[0]}\n")
        for row in a:
            fh.write(" ".join(f"{v:.16e}" for v in row) + "\n")
