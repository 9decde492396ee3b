"""Noncommutative differential calculus attached to a jump operator set.

The partial derivative in direction j is the commutator [V_j, .]; the
gradient stacks all partials into a jump-indexed vector field (an ndarray
of shape (J, n, n)), and the divergence is minus its adjoint,

    div(V) = - sum_j [V_j*, V_j-component].

The anti-unitary involution J on fields sends component j to minus the
adjoint of component j* and singles out the real subspace of fields fixed
by it; gradients of Hermitian matrices and their weighted images live
there.  The weighted Laplacian K_rho = -div([rho]_Lambda grad .) eliminates
velocities from the continuity constraint of the transport problem.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

import numpy.linalg

from .connections import ConnectionFamily, apply_connection
from .exceptions import DomainError, StructuralError, ValidationError
from .gns_linalg import (
    SuperOperator,
    gns_norm,
    hermitian_traceless_basis,
    ntrace,
    require_hermitian,
    superop_matrix,
)
from .lindblad import JumpOperatorSet


def _check_index(js: JumpOperatorSet, j: int) -> int:
    if not 0 <= j < js.size:
        raise DomainError(f"jump index {j} out of range for {js.size} jumps")
    return j


def partial_j(js: JumpOperatorSet, j: int, A: np.ndarray) -> np.ndarray:
    """The commutator derivative [V_j, A]."""
    j = _check_index(js, j)
    A = np.asarray(A, dtype=complex)
    V = js.vs[j]
    return V @ A - A @ V


def grad(js: JumpOperatorSet, A: np.ndarray) -> np.ndarray:
    """Gradient field ([V_j, A])_j, shape (J, n, n)."""
    A = np.asarray(A, dtype=complex)
    return np.einsum("jab,bc->jac", js.vs, A) - np.einsum("ab,jbc->jac", A, js.vs)


def divergence(js: JumpOperatorSet, V: np.ndarray) -> np.ndarray:
    """div(V) = - sum_j [V_j*, V_j-component]; the adjoint of -grad."""
    V = np.asarray(V, dtype=complex)
    if V.shape != js.vs.shape:
        raise ValidationError(f"field shape {V.shape} does not match jump set {js.vs.shape}")
    vstar = js.vs.conj().transpose(0, 2, 1)
    comm = np.einsum("jab,jbc->ac", vstar, V) - np.einsum("jab,jbc->ac", V, vstar)
    return -comm


def J_map(js: JumpOperatorSet, V: np.ndarray) -> np.ndarray:
    """The anti-unitary involution on fields: slot j* receives -(component j)*.

    The sign makes the map agree with its defining action on products,
    J(X [V_j, A]) = [V_{j*}, A*] X*, and makes gradients of Hermitian
    matrices fixed points.
    """
    V = np.asarray(V, dtype=complex)
    if V.shape != js.vs.shape:
        raise ValidationError(f"field shape {V.shape} does not match jump set {js.vs.shape}")
    out = np.empty_like(V)
    out[js.involution] = -V.conj().transpose(0, 2, 1)
    return out


def is_real_field(js: JumpOperatorSet, V: np.ndarray, tol: float = 1e-10) -> bool:
    """Membership in the real subspace of J-fixed fields, within tol."""
    V = np.asarray(V, dtype=complex)
    diff = J_map(js, V) - V
    scale = max(1.0, float(np.linalg.norm(V)))
    return float(np.linalg.norm(diff)) <= tol * scale


def weighted_laplacian(js: JumpOperatorSet, conn: ConnectionFamily, rho: np.ndarray) -> SuperOperator:
    """The positive operator K_rho(A) = -div([rho]_Lambda grad A).

    Its quadratic form is <grad A, [rho]_Lambda grad A> >= 0 and its kernel
    is spanned by the identity when the jump set is ergodic and rho is
    strictly positive.
    """
    rho = require_hermitian(rho, name="rho")
    if np.linalg.eigvalsh(rho)[0] <= 0.0:
        raise DomainError("weighted Laplacian requires a strictly positive density")
    return superop_matrix(lambda A: -divergence(js, apply_connection(conn, rho, grad(js, A))), js.dim)


def _laplacian_quadratic_matrix(js: JumpOperatorSet, conn: ConnectionFamily, rho: np.ndarray,
                                basis: np.ndarray) -> np.ndarray:
    """Real symmetric matrix of the form <grad B_a, [rho]_Lambda grad B_b>."""
    n = js.dim
    grads = np.stack([grad(js, B) for B in basis])        # (d, J, n, n)
    w, U = np.linalg.eigh(rho)
    w = np.maximum(w, 0.0)
    T = np.einsum("mk,djmn,nl->djkl", U.conj(), grads, U)
    M = np.stack([ker.grid(w) for ker in conn.kernels])   # (J, n, n)
    K = np.einsum("jkl,djkl,ejkl->de", M, T.conj(), T).real / n
    return 0.5 * (K + K.T)


def solve_potential(js: JumpOperatorSet, conn: ConnectionFamily, rho: np.ndarray,
                    g: np.ndarray, residual_tol: float = 1e-9) -> np.ndarray:
    """Solve K_rho(A) = g for the unique traceless Hermitian potential A.

    Restricted to the traceless Hermitian subspace the weighted Laplacian
    is positive definite under ergodicity, so the reduced system is solved
    by a Cholesky factorization; failure signals a kernel of dimension
    greater than one.
    """
    rho = require_hermitian(rho, name="rho")
    if np.linalg.eigvalsh(rho)[0] <= 0.0:
        raise DomainError("solve_potential requires a strictly positive density")
    g = require_hermitian(g, name="right-hand side")
    scale = max(1.0, float(gns_norm(g)))
    if abs(ntrace(g)) > 1e-10 * scale:
        raise DomainError("right-hand side must be traceless for a solvable potential equation")
    n = js.dim
    basis = hermitian_traceless_basis(n)
    K = _laplacian_quadratic_matrix(js, conn, rho, basis)
    rhs = np.real(np.einsum("amn,nm->a", basis, g)) / n
    try:
        c, low = cho_factor(K)
        x = cho_solve((c, low), rhs)
    except (LinAlgError, numpy.linalg.LinAlgError) as exc:
        raise StructuralError(
            "weighted Laplacian is singular on the traceless subspace (non-ergodic jump set)"
        ) from exc
    A = np.einsum("a,amn->mn", x, basis)
    residual = gns_norm(-divergence(js, apply_connection(conn, rho, grad(js, A))) - g)
    if residual > residual_tol * max(gns_norm(g), 1e-300):
        raise StructuralError(
            f"potential solve residual {residual:.3e} exceeds {residual_tol:.1e}; "
            "the reduced system is numerically singular"
        )
    return A
