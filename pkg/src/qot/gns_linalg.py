"""Dense Hermitian linear algebra over the GNS Hilbert space.

Conventions used everywhere in this package:

* tau is the normalized trace tr/n, so densities satisfy tau(rho) = 1 and
  carry ordinary trace n.
* <A, B> = tau(A* B) is the GNS inner product (conjugate-linear in the
  first argument).
* Superoperators are stored as n^2 x n^2 matrices acting on row-major
  vectorizations.  The rescaled matrix units sqrt(n) E_kl form a
  GNS-orthonormal basis whose coordinates are a uniform rescaling of the
  raw vectorization, so the GNS adjoint of a superoperator is simply the
  conjugate transpose of its matrix.

Matrices are plain complex ndarrays; the design envelope is n <= 8.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import DomainError, ValidationError

HERMITICITY_TOL = 1e-10
CLUSTER_TOL = 1e-10


def _as_square(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {M.shape}")
    return M


def ntrace(M: np.ndarray) -> complex:
    """Normalized trace tr(M)/n."""
    M = _as_square(M)
    return complex(np.trace(M) / M.shape[0])


def gns_inner(A: np.ndarray, B: np.ndarray) -> complex:
    """GNS inner product tau(A* B), conjugate-linear in A."""
    A = _as_square(A, "A")
    B = _as_square(B, "B")
    if A.shape != B.shape:
        raise ValidationError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return complex(np.vdot(A, B) / A.shape[0])


def gns_norm(A: np.ndarray) -> float:
    """Norm induced by the GNS inner product: ||A||_F / sqrt(n)."""
    A = _as_square(A)
    return float(np.linalg.norm(A) / np.sqrt(A.shape[0]))


def require_hermitian(H: np.ndarray, tol: float = HERMITICITY_TOL, name: str = "matrix") -> np.ndarray:
    """Check Hermiticity within tol (relative to scale) and return the Hermitian part."""
    H = _as_square(H, name)
    scale = max(1.0, float(np.linalg.norm(H)))
    asym = float(np.linalg.norm(H - H.conj().T))
    if asym > tol * scale:
        raise ValidationError(f"{name} is not Hermitian: asymmetry {asym:.3e} exceeds {tol:.1e}")
    return 0.5 * (H + H.conj().T)


def require_density(rho: np.ndarray, strict: bool = False, tol: float = 1e-8, name: str = "density") -> np.ndarray:
    """Validate a density matrix: Hermitian, tau(rho) = 1, spectrum >= 0 (> 0 if strict)."""
    rho = require_hermitian(rho, name=name)
    tr = ntrace(rho).real
    if abs(tr - 1.0) > tol:
        raise DomainError(f"{name} must have normalized trace 1, got {tr:.12g}")
    w = np.linalg.eigvalsh(rho)
    if strict:
        if w[0] <= 0.0:
            raise DomainError(f"{name} must be strictly positive, smallest eigenvalue {w[0]:.3e}")
    elif w[0] < -tol:
        raise DomainError(f"{name} has negative eigenvalue {w[0]:.3e}")
    return rho


def eigh(H: np.ndarray, cluster_tol: float = CLUSTER_TOL) -> tuple[np.ndarray, list[np.ndarray]]:
    """Spectral decomposition with near-degenerate eigenvalues merged.

    Returns ascending cluster eigenvalues and the matching spectral
    projections, so that sum_k lam_k E_k reconstructs H.  Eigenvalues whose
    gap is below cluster_tol times the spectral radius are merged into one
    projection; this keeps the projections well defined under the floating
    point noise of nearly degenerate spectra.
    """
    H = require_hermitian(H)
    w, U = np.linalg.eigh(H)
    radius = float(np.max(np.abs(w))) if w.size else 0.0
    gap = cluster_tol * max(radius, 1e-300)
    values = []
    projections = []
    start = 0
    for i in range(1, len(w) + 1):
        if i == len(w) or w[i] - w[i - 1] > gap:
            block = U[:, start:i]
            projections.append(block @ block.conj().T)
            values.append(float(np.mean(w[start:i])))
            start = i
    return np.array(values), projections


def matfunc(H: np.ndarray, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a scalar function to a Hermitian matrix through its spectrum.

    Raises DomainError if f produces non-finite values on any eigenvalue.
    """
    H = require_hermitian(H)
    w, U = np.linalg.eigh(H)
    with np.errstate(all="ignore"):
        fw = np.asarray(f(w), dtype=float)
    if not np.all(np.isfinite(fw)):
        raise DomainError("eigenvalue outside the domain of the scalar function")
    out = (U * fw) @ U.conj().T
    return 0.5 * (out + out.conj().T)


def herm_log(H: np.ndarray, min_eig: float = 1e-12) -> np.ndarray:
    """Matrix logarithm of a strictly positive Hermitian matrix.

    Eigenvalues below min_eig raise instead of being clipped: entropy and
    Fisher values feed acceptance identities where silent clipping would
    bias results.
    """
    H = require_hermitian(H)
    w = np.linalg.eigvalsh(H)
    if w[0] < min_eig:
        raise DomainError(f"matrix log requires eigenvalues >= {min_eig:.1e}, got {w[0]:.3e}")
    return matfunc(H, np.log)


def herm_exp(H: np.ndarray) -> np.ndarray:
    """Matrix exponential of a Hermitian matrix via its spectrum."""
    return matfunc(H, np.exp)


def vec(A: np.ndarray) -> np.ndarray:
    """Row-major vectorization."""
    return np.asarray(A, dtype=complex).reshape(-1)


def unvec(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of vec."""
    return np.asarray(v, dtype=complex).reshape(n, n)


@dataclass(frozen=True)
class SuperOperator:
    """A linear map on n x n matrices, stored as its n^2 x n^2 matrix.

    The matrix acts on row-major vectorizations; `apply` is the action on
    matrices.  `adjoint` is the adjoint with respect to the GNS inner
    product, which in this representation is the conjugate transpose.
    """

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.dim**2, self.dim**2):
            raise ValidationError(f"superoperator matrix must be {self.dim**2} x {self.dim**2}, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    def apply(self, A: np.ndarray) -> np.ndarray:
        A = _as_square(A)
        if A.shape[0] != self.dim:
            raise ValidationError(f"expected {self.dim} x {self.dim} input, got {A.shape}")
        return unvec(self.matrix @ vec(A), self.dim)

    def adjoint(self) -> "SuperOperator":
        return SuperOperator(self.dim, self.matrix.conj().T)

    def __call__(self, A: np.ndarray) -> np.ndarray:
        return self.apply(A)


def superop_matrix(K: Callable[[np.ndarray], np.ndarray], dim: int) -> SuperOperator:
    """Matrix representation of a linear map on n x n matrices.

    A cheap linearity spot-check on a combination of two basis units guards
    against accidentally passing an affine or nonlinear map.
    """
    n = dim
    cols = np.empty((n * n, n * n), dtype=complex)
    units = []
    for k in range(n):
        for l in range(n):
            E = np.zeros((n, n), dtype=complex)
            E[k, l] = 1.0
            units.append(E)
            cols[:, k * n + l] = vec(K(E))
    c = 0.5 + 0.25j
    combo = units[0] + c * units[-1]
    direct = vec(K(combo))
    linear = cols[:, 0] + c * cols[:, -1]
    scale = max(1.0, float(np.linalg.norm(direct)))
    if np.linalg.norm(direct - linear) > 1e-10 * scale:
        raise ValidationError("map is not linear: spot-check on basis sums failed")
    return SuperOperator(n, cols)


def superop_adjoint(K: SuperOperator) -> SuperOperator:
    """Adjoint with respect to the GNS inner product."""
    return K.adjoint()


def hermitian_traceless_basis(n: int) -> np.ndarray:
    """Orthonormal basis of traceless Hermitian n x n matrices.

    Orthonormality is with respect to the real inner product tau(A B); the
    generalized Gell-Mann construction is scaled so each element has GNS
    norm 1.  Shape (n^2 - 1, n, n).
    """
    basis = []
    s = np.sqrt(n / 2.0)
    for k in range(n):
        for l in range(k + 1, n):
            X = np.zeros((n, n), dtype=complex)
            X[k, l] = s
            X[l, k] = s
            basis.append(X)
            Y = np.zeros((n, n), dtype=complex)
            Y[k, l] = -1j * s
            Y[l, k] = 1j * s
            basis.append(Y)
    for m in range(1, n):
        d = np.zeros(n, dtype=complex)
        d[:m] = 1.0
        d[m] = -m
        d *= np.sqrt(n / (m * (m + 1.0)))
        basis.append(np.diag(d))
    return np.array(basis)


def hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal Hermitian basis: the identity followed by the traceless basis."""
    return np.concatenate([np.eye(n, dtype=complex)[None], hermitian_traceless_basis(n)])


def hermitian_coords(H: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Real coordinates of a Hermitian matrix in an orthonormal Hermitian basis."""
    n = H.shape[0]
    return np.real(np.einsum("amn,nm->a", basis, H)) / n


def hermitian_from_coords(c: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Inverse of hermitian_coords."""
    return np.einsum("a,amn->mn", np.asarray(c, dtype=float), basis)
