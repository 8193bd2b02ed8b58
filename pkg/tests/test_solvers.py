"""Unit tests for the factorizations, preconditioners and MinRes."""

import numpy as np
import pytest
import scipy.sparse as sp

from mpetprec.congruence import (
    MpetParameters,
    build_exchange_matrix,
    diagonalize_by_congruence,
    transform_parameters,
)
from mpetprec.meshfem import (
    DofMap,
    apply_dirichlet,
    assemble_mass_p1,
    assemble_stiffness_p1,
    build_unit_square_mesh,
)
from mpetprec.solvers import (
    BlockDiagPreconditioner,
    SolverError,
    build_precond_mpet_naive,
    build_precond_mpet_transformed,
    build_precond_mpt_naive,
    build_precond_mpt_transformed,
    factorize_spd,
    minres,
)
from mpetprec.systems import (
    assemble_mpet,
    assemble_mpet_transformed,
    assemble_mpt,
    assemble_mpt_transformed,
    build_mpet_rhs,
    build_mpt_rhs,
    transform_rhs,
)

XI3 = np.array([
    [0.0, 0.01, 1.0],
    [0.01, 0.0, 0.0001],
    [1.0, 0.0001, 0.0],
])


def dirichlet_laplacian(N):
    mesh = build_unit_square_mesh(N)
    A = assemble_stiffness_p1(mesh)
    A, _ = apply_dirichlet(A, np.zeros(A.shape[0]), DofMap(mesh, "P1").dirichlet_dofs)
    return A


class TestFactorizeSpd:
    def test_identity(self):
        f = factorize_spd(sp.eye(7, format="csr"))
        b = np.arange(7.0)
        assert np.array_equal(f.solve(b), b)

    def test_laplacian_matches_dense(self):
        A = dirichlet_laplacian(8)
        f = factorize_spd(A)
        rng = np.random.default_rng(2)
        b = rng.standard_normal(A.shape[0])
        x = f.solve(b)
        xd = np.linalg.solve(A.toarray(), b)
        assert np.abs(x - xd).max() < 1e-10 * max(np.abs(xd).max(), 1e-300)
        assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)

    def test_mass_constructed_solution(self):
        mesh = build_unit_square_mesh(5)
        M = assemble_mass_p1(mesh)
        f = factorize_spd(M)
        ones = np.ones(M.shape[0])
        assert np.abs(f.solve(M @ ones) - 1.0).max() < 1e-12

    def test_rejects_indefinite(self):
        A = sp.diags([1.0, -2.0, 3.0]).tocsr()
        with pytest.raises(SolverError, match="not SPD"):
            factorize_spd(A, name="indefinite test block")

    def test_rejects_asymmetric(self):
        A = sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
        with pytest.raises(SolverError, match="symmetric"):
            factorize_spd(A)


class TestBlockDiagPreconditioner:
    def test_apply_and_inner_are_inverse(self):
        A = dirichlet_laplacian(4)
        mesh = build_unit_square_mesh(4)
        M = assemble_mass_p1(mesh)
        B = BlockDiagPreconditioner([A, M])
        rng = np.random.default_rng(3)
        x = rng.standard_normal(B.size)
        assert np.abs(B.inner_matvec(B.apply(x)) - x).max() < 1e-10 * np.abs(x).max()

    def test_symmetric_application(self):
        B = BlockDiagPreconditioner([dirichlet_laplacian(4)])
        rng = np.random.default_rng(5)
        for _ in range(5):
            x = rng.standard_normal(B.size)
            y = rng.standard_normal(B.size)
            assert abs(x @ B.apply(y) - y @ B.apply(x)) < 1e-12 * (
                np.abs(x @ B.apply(y)) + 1.0)

    def test_positive_on_random_vectors(self):
        B = BlockDiagPreconditioner([dirichlet_laplacian(5)])
        rng = np.random.default_rng(6)
        for _ in range(100):
            x = rng.standard_normal(B.size)
            assert x @ B.apply(x) > 0

    def test_scaling_exact(self):
        # power-of-two scaling commutes with the triangular solves bitwise
        B = BlockDiagPreconditioner([dirichlet_laplacian(4)])
        rng = np.random.default_rng(7)
        x = rng.standard_normal(B.size)
        assert np.array_equal(B.apply(4.0 * x), 4.0 * B.apply(x))


class TestMptPreconditioners:
    def test_naive_layout(self):
        mesh = build_unit_square_mesh(3)
        E = build_exchange_matrix(XI3)
        system = assemble_mpt(mesh, [1.0, 0.0001, 0.01], E)
        B = build_precond_mpt_naive(system)
        assert len(B.layout) == 3

    def test_naive_exact_when_decoupled(self):
        mesh = build_unit_square_mesh(4)
        system = assemble_mpt(mesh, [1.0, 2.0], np.zeros((2, 2)))
        B = build_precond_mpt_naive(system)
        rhs = np.concatenate(build_mpt_rhs(mesh, [1.0, 0.5]))
        x, report = minres(system, B, rhs, tol=1e-3, seed=0)
        assert report.converged and report.iterations == 1

    def test_naive_matches_dense_block_inverse(self):
        mesh = build_unit_square_mesh(4)
        xi = np.array([[0.0, 5.0], [5.0, 0.0]])
        system = assemble_mpt(mesh, [1.0, 0.1], build_exchange_matrix(xi))
        B = build_precond_mpt_naive(system)
        n = system.layout[0]
        dense = np.zeros((2 * n, 2 * n))
        dense[:n, :n] = np.linalg.inv(system.blocks[(0, 0)].toarray())
        dense[n:, n:] = np.linalg.inv(system.blocks[(1, 1)].toarray())
        rng = np.random.default_rng(9)
        x = rng.standard_normal(2 * n)
        assert np.abs(B.apply(x) - dense @ x).max() < 1e-10 * np.abs(dense @ x).max()

    def test_transformed_blocks_realize_diagonal_coefficients(self):
        mesh = build_unit_square_mesh(3)
        K = np.array([1.0, 0.0001, 0.01])
        E = build_exchange_matrix(XI3)
        res = diagonalize_by_congruence(K, E)
        B = build_precond_mpt_transformed(mesh, res)
        stiff = assemble_stiffness_p1(mesh)
        mass = assemble_mass_p1(mesh)
        bdofs = DofMap(mesh, "P1").dirichlet_dofs
        for j in range(3):
            expected, _ = apply_dirichlet(
                res.dK[j] * stiff + max(res.dGamma[j], 0.0) * mass,
                np.zeros(stiff.shape[0]), bdofs)
            assert np.abs((B.matrices[j] - expected).toarray()).max() < 1e-14

    def test_transformed_zero_exchange_pure_laplacian(self):
        mesh = build_unit_square_mesh(3)
        res = diagonalize_by_congruence([2.0, 3.0], np.zeros((2, 2)))
        B = build_precond_mpt_transformed(mesh, res)
        stiff = assemble_stiffness_p1(mesh)
        bdofs = DofMap(mesh, "P1").dirichlet_dofs
        for j, coeff in enumerate((2.0, 3.0)):
            expected, _ = apply_dirichlet(coeff * stiff, np.zeros(stiff.shape[0]), bdofs)
            assert np.abs((B.matrices[j] - expected).toarray()).max() < 1e-14

    def test_transformed_application_matches_dense_inverse(self):
        mesh = build_unit_square_mesh(4)
        res = diagonalize_by_congruence(
            [1.0, 0.0001, 0.01], build_exchange_matrix(XI3))
        B = build_precond_mpt_transformed(mesh, res)
        dense = np.linalg.inv(B.inner_csr().toarray())
        rng = np.random.default_rng(10)
        x = rng.standard_normal(B.size)
        assert np.abs(B.apply(x) - dense @ x).max() < 1e-10 * np.abs(dense @ x).max()


class TestMpetPreconditioners:
    def _params(self, **kw):
        base = dict(mu=1.0, lam=1.0, alpha=[0.5, 0.5], s=[1.0, 1.0],
                    K=[1.0, 1.0], tau=1.0)
        base.update(kw)
        return MpetParameters(**base)

    def test_naive_layout(self):
        mesh = build_unit_square_mesh(2)
        params = self._params()
        system = assemble_mpet(mesh, params)
        B = build_precond_mpet_naive(system, params)
        assert len(B.layout) == 2 + params.J

    def test_naive_single_network_biot_structure(self):
        mesh = build_unit_square_mesh(2)
        params = MpetParameters(mu=2.0, lam=3.0, alpha=[0.9], s=[0.5], K=[1.0])
        system = assemble_mpet(mesh, params)
        B = build_precond_mpet_naive(system, params)
        mass = assemble_mass_p1(mesh)
        # p0 block realizes the (2 mu)^{-1}-weighted mass
        assert np.abs((B.matrices[1] - mass / (2 * params.mu)).toarray()).max() < 1e-14
        stiff = assemble_stiffness_p1(mesh)
        bdofs = DofMap(mesh, "P1").dirichlet_dofs
        dcoef = params.s[0] + params.alpha[0] ** 2 / params.lam
        expected, _ = apply_dirichlet(
            params.tau * params.K[0] * stiff + dcoef * mass,
            np.zeros(stiff.shape[0]), bdofs)
        assert np.abs((B.matrices[2] - expected).toarray()).max() < 1e-14

    def test_naive_application_matches_dense_inverse(self):
        mesh = build_unit_square_mesh(4)
        params = self._params(lam=100.0, K=[1.0, 0.01],
                              xi=np.array([[0.0, 10.0], [10.0, 0.0]]))
        system = assemble_mpet(mesh, params)
        B = build_precond_mpet_naive(system, params)
        dense = np.linalg.inv(B.inner_csr().toarray())
        rng = np.random.default_rng(11)
        x = rng.standard_normal(B.size)
        assert np.abs(B.apply(x) - dense @ x).max() < 1e-10 * np.abs(dense @ x).max()

    def test_transformed_variants_hand_example(self):
        # storage-inclusive variant: pressure blocks stiffness + {3/2, 1} mass;
        # default variant: stiffness + {1/2, 0} mass
        mesh = build_unit_square_mesh(2)
        params = self._params()
        stiff = assemble_stiffness_p1(mesh)
        mass = assemble_mass_p1(mesh)
        bdofs = DofMap(mesh, "P1").dirichlet_dofs
        for include, coeffs in ((True, (1.5, 1.0)), (False, (0.5, 0.0))):
            res = transform_parameters(params, include_storage=include)
            B = build_precond_mpet_transformed(mesh, params, res)
            for j, c in enumerate(coeffs):
                expected, _ = apply_dirichlet(stiff + c * mass,
                                              np.zeros(stiff.shape[0]), bdofs)
                gap = np.abs((B.matrices[2 + j] - expected).toarray()).max()
                assert gap < 1e-12, (include, j)

    def test_mu_scaling(self):
        mesh = build_unit_square_mesh(2)
        p1 = self._params(mu=1.0)
        p2 = self._params(mu=2.0)
        r1 = transform_parameters(p1)
        r2 = transform_parameters(p2)
        B1 = build_precond_mpet_transformed(mesh, p1, r1)
        B2 = build_precond_mpet_transformed(mesh, p2, r2)
        # elasticity doubles (away from the unscaled Dirichlet unit diagonal)
        udofs = DofMap(mesh, "P2-vector").dirichlet_dofs
        free = np.setdiff1d(np.arange(B1.layout[0]), udofs)
        gap = (B2.matrices[0] - 2.0 * B1.matrices[0]).toarray()[np.ix_(free, free)]
        assert np.abs(gap).max() < 1e-12
        assert np.abs((B2.matrices[1] - 0.5 * B1.matrices[1]).toarray()).max() < 1e-14

    def test_transformed_application_matches_dense_inverse(self):
        mesh = build_unit_square_mesh(4)
        params = self._params(lam=1e4, K=[1.0, 1e-3],
                              xi=np.array([[0.0, 100.0], [100.0, 0.0]]))
        res = transform_parameters(params)
        B = build_precond_mpet_transformed(mesh, params, res)
        dense = np.linalg.inv(B.inner_csr().toarray())
        rng = np.random.default_rng(13)
        x = rng.standard_normal(B.size)
        assert np.abs(B.apply(x) - dense @ x).max() < 1e-10 * np.abs(dense @ x).max()


class TestMinres:
    def test_exact_preconditioner_one_iteration(self):
        rng = np.random.default_rng(14)
        R = rng.standard_normal((30, 30))
        A = sp.csr_matrix(R @ R.T + 30 * np.eye(30))
        B = BlockDiagPreconditioner([A])
        b = rng.standard_normal(30)
        x, report = minres(A, B, b, tol=1e-3, seed=0)
        assert report.converged and report.iterations == 1
        assert np.linalg.norm(A @ x - b) < 1e-8 * np.linalg.norm(b)

    def test_small_spd_matches_dense(self):
        rng = np.random.default_rng(15)
        R = rng.standard_normal((25, 25))
        A = sp.csr_matrix(R @ R.T + 25 * np.eye(25))
        b = rng.standard_normal(25)
        x, report = minres(A, None, b, tol=1e-12, maxit=500, seed=1)
        xd = np.linalg.solve(A.toarray(), b)
        assert report.converged
        assert np.abs(x - xd).max() < 1e-8 * np.abs(xd).max()

    def test_two_by_two_saddle_two_iterations(self):
        A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, -1.0]]))
        b = np.array([1.0, 0.5])
        x, report = minres(A, None, b, tol=1e-10, maxit=10, seed=0)
        assert report.converged and report.iterations <= 2
        assert np.abs(x - np.linalg.solve(A.toarray(), b)).max() < 1e-8

    def test_monotone_history(self):
        rng = np.random.default_rng(16)
        for trial in range(20):
            n = int(rng.integers(5, 50))
            Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            w = rng.uniform(0.5, 2.0, size=n) * rng.choice([-1.0, 1.0], size=n)
            A = sp.csr_matrix(Q @ np.diag(w) @ Q.T)
            b = rng.standard_normal(n)
            _, report = minres(A, None, b, tol=1e-10, maxit=4 * n, seed=trial)
            h = report.residual_history
            assert np.all(np.diff(h) <= 1e-12 * h[0])

    def test_finite_termination_k_distinct_eigenvalues(self):
        rng = np.random.default_rng(17)
        for k in (1, 2, 3, 5):
            values = np.linspace(1.0, 3.0, k)
            diag = np.repeat(values, 6)
            A = sp.diags(diag).tocsr()
            b = rng.standard_normal(diag.size)
            _, report = minres(A, None, b, tol=1e-8, maxit=100, seed=0)
            assert report.converged and report.iterations <= k

    def test_maxit_returns_unconverged_report(self):
        A = sp.csr_matrix(np.diag(np.linspace(1e-6, 1.0, 40)))
        b = np.ones(40)
        _, report = minres(A, None, b, tol=1e-14, maxit=3, seed=0)
        assert not report.converged and report.iterations == 3

    def test_report_final_ratio_definition(self):
        A = sp.eye(5, format="csr") * 2.0
        b = np.ones(5)
        _, report = minres(A, None, b, tol=1e-3, seed=0)
        h = report.residual_history
        assert abs(report.final_ratio - (h[-1] / h[0]) ** 2) < 1e-15

    def test_robustness_joint_parameter_substitution(self):
        # scaling exchange and the second Lame parameter together by 1e6
        # leaves the transformed-preconditioner iteration count essentially
        # unchanged (single-direction substitutions drift a little more)
        mesh = build_unit_square_mesh(16)

        def iterations(xi_val, lam):
            params = MpetParameters(
                mu=1.0, lam=lam, alpha=[0.5, 0.5], s=[1.0, 1.0], K=[1.0, 1.0],
                xi=np.array([[0.0, xi_val], [xi_val, 0.0]]), tau=1.0)
            res = transform_parameters(params)
            system = assemble_mpet_transformed(mesh, params, res)
            precond = build_precond_mpet_transformed(mesh, params, res)
            rhs = build_mpet_rhs(mesh, params)
            rhs = rhs[:2] + transform_rhs(rhs[2:], res.P)
            _, report = minres(system, precond, np.concatenate(rhs),
                               tol=1e-3, maxit=5000, seed=0)
            assert report.converged
            return report.iterations

        base = iterations(1.0, 1.0)
        scaled = iterations(1e6, 1e6)
        assert abs(base - scaled) <= 2
