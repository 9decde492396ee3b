import numpy as np
import pytest

from qot import (
    DomainError,
    J_map,
    StructuralError,
    build_generator,
    dephasing_free_chain,
    depolarizing,
    divergence,
    gns_inner,
    gns_norm,
    grad,
    hermitian_traceless_basis,
    is_real_field,
    ntrace,
    partial_j,
    solve_potential,
    two_point,
    weighted_laplacian,
)
from qot.connections import arithmetic_family, field_inner, kms_family

from conftest import rand_density, rand_field, rand_hermitian, rand_matrix
from test_lindblad import reducible_fixture


SQRT2 = np.sqrt(2.0)


class TestPartial:
    def test_identity_in_kernel(self):
        js = two_point(0.3)
        for j in range(js.size):
            assert gns_norm(partial_j(js, j, np.eye(2))) == 0.0

    def test_self_commutator_vanishes(self):
        js = two_point(0.3)
        assert gns_norm(partial_j(js, 0, js.vs[0])) == 0.0

    def test_two_point_example(self):
        """[V_1, diag(1, 0)] = -sqrt(2) E_12 by direct 2x2 multiplication."""
        js = two_point(0.3)
        out = partial_j(js, 0, np.diag([1.0, 0.0]).astype(complex))
        expected = np.array([[0.0, -SQRT2], [0.0, 0.0]])
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_index_out_of_range(self):
        with pytest.raises(DomainError):
            partial_j(two_point(0.3), 5, np.eye(2))


class TestGrad:
    def test_zero_on_identity(self):
        js = dephasing_free_chain(3, [0.5, 0.3, 0.2])
        assert np.linalg.norm(grad(js, np.eye(3))) == 0.0

    def test_hermitian_gradient_is_real_field(self, rng):
        js = two_point(0.3)
        for _ in range(10):
            assert is_real_field(js, grad(js, rand_hermitian(rng, 2)), tol=1e-12)

    def test_kernel_is_span_of_identity(self):
        """Stacked gradient superoperator has a one-dimensional nullspace."""
        for js in (two_point(0.3), depolarizing(2)):
            n = js.dim
            rows = []
            for j in range(js.size):
                V = js.vs[j]
                rows.append(np.kron(V, np.eye(n)) - np.kron(np.eye(n), V.T))
            stacked = np.vstack(rows)
            svals = np.linalg.svd(stacked, compute_uv=False)
            assert np.sum(svals < 1e-10 * svals[0]) == 1


class TestDivergence:
    def test_zero_field(self):
        js = two_point(0.3)
        assert gns_norm(divergence(js, np.zeros((2, 2, 2), complex))) == 0.0

    def test_integration_by_parts(self, rng):
        js = dephasing_free_chain(3, [0.5, 0.3, 0.2])
        for _ in range(10):
            A = rand_matrix(rng, 3)
            V = rand_field(rng, js.size, 3)
            lhs = field_inner(grad(js, A), V)
            rhs = -ntrace(A.conj().T @ divergence(js, V))
            assert abs(lhs - rhs) < 1e-10

    def test_trace_free(self, rng):
        js = two_point(0.3)
        for _ in range(10):
            assert abs(ntrace(divergence(js, rand_field(rng, 2, 2)))) < 1e-13


class TestJMap:
    def test_involution(self, rng):
        js = two_point(0.3)
        V = rand_field(rng, 2, 2)
        np.testing.assert_allclose(J_map(js, J_map(js, V)), V, atol=1e-14)

    def test_anti_unitary(self, rng):
        js = dephasing_free_chain(3, [0.5, 0.3, 0.2])
        for _ in range(10):
            V = rand_field(rng, js.size, 3)
            W = rand_field(rng, js.size, 3)
            lhs = field_inner(J_map(js, V), J_map(js, W))
            rhs = field_inner(W, V)
            assert abs(lhs - rhs) < 1e-10

    def test_fixes_hermitian_gradients(self, rng):
        js = two_point(0.3)
        A = rand_hermitian(rng, 2)
        gA = grad(js, A)
        np.testing.assert_allclose(J_map(js, gA), gA, atol=1e-12)

    def test_defining_formula_on_spanning_elements(self, rng):
        """J(X [V_j, A]) has component [V_{j*}, A*] X* at slot j*."""
        js = two_point(0.3)
        for j in range(js.size):
            X, A = rand_matrix(rng, 2), rand_matrix(rng, 2)
            V = np.zeros((2, 2, 2), complex)
            V[j] = X @ partial_j(js, j, A)
            out = J_map(js, V)
            jstar = js.involution[j]
            expected = partial_j(js, jstar, A.conj().T) @ X.conj().T
            np.testing.assert_allclose(out[jstar], expected, atol=1e-12)

    def test_product_rule_consistency(self, rng):
        """J(([V_j, A]) X) has component X* [V_{j*}, A*] at slot j*."""
        js = two_point(0.3)
        for j in range(js.size):
            X, A = rand_matrix(rng, 2), rand_matrix(rng, 2)
            V = np.zeros((2, 2, 2), complex)
            V[j] = partial_j(js, j, A) @ X
            out = J_map(js, V)
            jstar = js.involution[j]
            expected = X.conj().T @ partial_j(js, jstar, A.conj().T)
            assert np.linalg.norm(out[jstar] - expected) < 1e-10


class TestWeightedLaplacian:
    def test_equals_minus_generator_at_identity(self):
        """With trivial frequencies and rho = 1 the Laplacian is -L."""
        js = depolarizing(2)
        K = weighted_laplacian(js, kms_family(js), np.eye(2, dtype=complex))
        L = build_generator(js).forward
        assert np.linalg.norm(K.matrix + L.matrix) < 1e-12

    def test_annihilates_identity(self, rng):
        js = two_point(0.3)
        K = weighted_laplacian(js, kms_family(js), rand_density(rng, 2, floor=0.2))
        assert gns_norm(K.apply(np.eye(2))) < 1e-12

    def test_positive_quadratic_form(self, rng):
        js = two_point(0.3)
        conn = kms_family(js)
        for _ in range(10):
            rho = rand_density(rng, 2, floor=0.1)
            K = weighted_laplacian(js, conn, rho)
            A = rand_hermitian(rng, 2)
            val = gns_inner(A, K.apply(A)).real
            assert val >= -1e-12

    def test_requires_positive_density(self):
        js = two_point(0.3)
        with pytest.raises(DomainError):
            weighted_laplacian(js, kms_family(js), np.diag([2.0, 0.0]).astype(complex))


class TestSolvePotential:
    def test_zero_rhs(self, rng):
        js = two_point(0.3)
        A = solve_potential(js, kms_family(js), rand_density(rng, 2, floor=0.2),
                            np.zeros((2, 2), complex))
        assert gns_norm(A) < 1e-12

    def test_round_trip(self, rng):
        js = dephasing_free_chain(3, [0.5, 0.3, 0.2])
        conn = kms_family(js)
        basis = hermitian_traceless_basis(3)
        for _ in range(5):
            rho = rand_density(rng, 3, floor=0.1)
            coeff = rng.standard_normal(len(basis))
            B = np.einsum("a,amn->mn", coeff, basis)
            K = weighted_laplacian(js, conn, rho)
            g = K.apply(B)
            rec = solve_potential(js, conn, rho, g)
            assert gns_norm(rec - B) < 1e-8

    def test_two_point_direct(self):
        js = two_point(0.3)
        conn = kms_family(js)
        g = 0.25 * np.diag([1.0, -1.0]).astype(complex)
        A = solve_potential(js, conn, js.sigma, g)
        K = weighted_laplacian(js, conn, js.sigma)
        assert gns_norm(K.apply(A) - g) < 1e-9 * gns_norm(g)
        assert abs(ntrace(A)) < 1e-12

    def test_traceful_rhs_rejected(self, rng):
        js = two_point(0.3)
        with pytest.raises(DomainError):
            solve_potential(js, kms_family(js), js.sigma, np.eye(2, dtype=complex))

    def test_non_ergodic_rejected(self, rng):
        js = reducible_fixture()
        g = np.diag([1.0, -1.0, 0.0]).astype(complex)
        with pytest.raises(StructuralError):
            solve_potential(js, arithmetic_family(js.size), np.eye(3, dtype=complex) , g)


def test_weighted_gradient_stays_real(rng):
    """[rho]_Lambda grad A keeps the J symmetry for symmetric families."""
    js = two_point(0.3)
    from qot.connections import apply_connection

    for conn in (kms_family(js), arithmetic_family(js.size)):
        for _ in range(5):
            A = rand_hermitian(rng, 2)
            rho = rand_density(rng, 2, floor=0.05)
            W = apply_connection(conn, rho, grad(js, A))
            assert is_real_field(js, W, tol=1e-10)


def test_divergence_of_gradient_traceless(rng):
    js = dephasing_free_chain(3, [0.5, 0.3, 0.2])
    for _ in range(5):
        A = rand_matrix(rng, 3)
        assert abs(ntrace(divergence(js, grad(js, A)))) < 1e-12
