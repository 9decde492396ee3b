"""Operator connections and the weighted actions [rho]_Lambda.

A connection family assigns to each jump index a scalar mean kernel
m_j(x, y) on (0, inf)^2.  Acting on a vector field component by component
through the spectral representation

    [rho]_Lambda W = sum_{k,l} m(lam_k, lam_l) E_k W E_l,

it defines the metric weights of the transport problem.  Two families are
built in: the KMS kernels

    m_omega(x, y) = (e^{omega/2} x - e^{-omega/2} y) / (omega + log x - log y),

which arise as integrals of weighted geometric means and reduce to the
logarithmic mean at omega = 0, and the arithmetic kernel (x + y)/2 whose
action is the anticommutator mean.  Both extend continuously to singular
densities: the KMS kernels vanish when either argument does, the
arithmetic kernel does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_legendre

from .exceptions import DomainError, ValidationError
from .gns_linalg import gns_inner, matfunc, require_hermitian

KERNEL_SINGULAR_BAND = 1e-6
KERNEL_CUTOFF = 1e-12
KERNEL_OVERLAP_TOL = 1e-9


@dataclass(frozen=True)
class MeanKernel:
    """Scalar mean kernel with an explicit rule on the boundary of the cone.

    fn evaluates the kernel for strictly positive arguments (vectorized);
    ext extends it to [0, inf)^2 by the kernel's singular-limit rule and is
    what spectral code uses on possibly singular densities.
    """

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    ext: Callable[[np.ndarray, np.ndarray], np.ndarray]
    omega: float | None = None

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.any(x <= 0.0) or np.any(y <= 0.0):
            raise DomainError(f"kernel '{self.name}' requires strictly positive arguments")
        return self.fn(x, y)

    def grid(self, lam: np.ndarray) -> np.ndarray:
        """Kernel matrix m(lam_k, lam_l) over a spectrum, boundary rule applied.

        Accepts stacked spectra of shape (..., m) and returns (..., m, m).
        Small negative eigenvalues from floating point are clamped to zero.
        """
        lam = np.maximum(np.asarray(lam, dtype=float), 0.0)
        return self.ext(lam[..., :, None], lam[..., None, :])


def kms_kernel(omega: float) -> MeanKernel:
    """The KMS mean kernel for a fixed Bohr frequency.

    Closed form (e^{omega/2} x - e^{-omega/2} y) / t with t = omega +
    log(x/y).  On the removable-singularity locus |t| < 1e-6 the 0/0 form is
    replaced by e^{omega/2} x (1 - t/2 + t^2/6), the Taylor expansion of the
    exact value e^{omega/2} x (1 - e^{-t})/t.
    """
    omega = float(omega)
    half = math.exp(omega / 2.0)

    def fn(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = omega + np.log(x) - np.log(y)
            closed = (half * x - y / half) / t
        series = half * x * (1.0 - t / 2.0 + t * t / 6.0)
        return np.where(np.abs(t) < KERNEL_SINGULAR_BAND, series, closed)

    def ext(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        pos = (x > 0.0) & (y > 0.0)
        safe_x = np.where(pos, x, 1.0)
        safe_y = np.where(pos, y, 1.0)
        return np.where(pos, fn(safe_x, safe_y), 0.0)

    return MeanKernel(name=f"kms({omega:g})", fn=fn, ext=ext, omega=omega)


def arithmetic_kernel() -> MeanKernel:
    """The arithmetic mean kernel (x + y) / 2; total on the closed cone."""

    def fn(x, y):
        return 0.5 * (np.asarray(x, dtype=float) + np.asarray(y, dtype=float))

    return MeanKernel(name="arithmetic", fn=fn, ext=fn, omega=None)


@dataclass(frozen=True)
class ConnectionFamily:
    """A jump-indexed family of mean kernels defining [rho]_Lambda."""

    name: str
    kernels: tuple[MeanKernel, ...]

    @property
    def size(self) -> int:
        return len(self.kernels)

    def symmetry_residual(self, involution: np.ndarray, grid: np.ndarray | None = None) -> float:
        """Max pointwise violation of m_{j*}(x, y) = m_j(y, x) on a sample grid.

        This symmetry is the hypothesis under which weighted gradients of
        Hermitian matrices stay in the real subspace.
        """
        if grid is None:
            grid = np.geomspace(1e-3, 1e3, 13)
        X, Y = np.meshgrid(grid, grid)
        worst = 0.0
        for j, ker in enumerate(self.kernels):
            partner = self.kernels[int(involution[j])]
            worst = max(worst, float(np.max(np.abs(partner.fn(X, Y) - ker.fn(Y, X)))))
        return worst


def kms_family(js) -> ConnectionFamily:
    """KMS kernels bound to the Bohr frequencies of a jump operator set."""
    return ConnectionFamily(name="kms", kernels=tuple(kms_kernel(om) for om in js.omegas))


def arithmetic_family(size: int) -> ConnectionFamily:
    """Arithmetic (anticommutator) kernels for every jump index."""
    return ConnectionFamily(name="arithmetic", kernels=(arithmetic_kernel(),) * size)


def connection_family(name: str, js) -> ConnectionFamily:
    """Family lookup used by problem files: 'kms' or 'arithmetic'."""
    if name == "kms":
        return kms_family(js)
    if name == "arithmetic":
        return arithmetic_family(js.size)
    raise DomainError(f"unknown connection family '{name}'")


def _check_field(conn: ConnectionFamily, V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=complex)
    if V.ndim != 3 or V.shape[0] != conn.size or V.shape[1] != V.shape[2]:
        raise ValidationError(f"vector field must have shape ({conn.size}, n, n), got {V.shape}")
    return V


def _psd_spectrum(rho: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    rho = require_hermitian(rho, name="weight matrix")
    w, U = np.linalg.eigh(rho)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -tol * scale:
        raise DomainError(f"weight matrix has negative eigenvalue {w[0]:.3e}")
    return np.maximum(w, 0.0), U


def apply_connection(conn: ConnectionFamily, rho: np.ndarray, V: np.ndarray) -> np.ndarray:
    """[rho]_Lambda V through the spectral representation, component by component."""
    V = _check_field(conn, V)
    w, U = _psd_spectrum(rho)
    T = np.einsum("mk,jmn,nl->jkl", U.conj(), V, U)
    M = np.stack([ker.grid(w) for ker in conn.kernels])
    return np.einsum("km,jmn,ln->jkl", U, M * T, U.conj())


def apply_connection_quadrature(conn: ConnectionFamily, rho: np.ndarray, V: np.ndarray,
                                npoints: int = 200) -> np.ndarray:
    """Independent evaluation of [rho]_Lambda V by Gauss-Legendre quadrature.

    Integrates e^{omega (s - 1/2)} rho^s V_j rho^{1-s} over s in [0, 1];
    only defined for families whose kernels carry a frequency (KMS).
    """
    V = _check_field(conn, V)
    if any(ker.omega is None for ker in conn.kernels):
        raise DomainError("quadrature form requires KMS kernels with a frequency")
    w, U = _psd_spectrum(rho)
    nodes, weights = roots_legendre(npoints)
    s = 0.5 * (nodes + 1.0)
    ds = 0.5 * weights
    out = np.zeros_like(V)
    omegas = np.array([ker.omega for ker in conn.kernels])
    for sv, dv in zip(s, ds):
        left = (U * w**sv) @ U.conj().T
        right = (U * w**(1.0 - sv)) @ U.conj().T
        phases = np.exp(omegas * (sv - 0.5)) * dv
        out += phases[:, None, None] * np.einsum("ab,jbc,cd->jad", left, V, right)
    return out


def weighted_norm_sq(conn: ConnectionFamily, rho: np.ndarray, V: np.ndarray) -> float:
    """<V, [rho]_Lambda V>, real and nonnegative up to round-off."""
    V = _check_field(conn, V)
    w, U = _psd_spectrum(rho)
    n = rho.shape[0]
    T = np.einsum("mk,jmn,nl->jkl", U.conj(), V, U)
    M = np.stack([ker.grid(w) for ker in conn.kernels])
    return float(np.sum(M * np.abs(T) ** 2).real / n)


def quad_inverse(conn: ConnectionFamily, rho: np.ndarray, V: np.ndarray,
                 kernel_cutoff: float = KERNEL_CUTOFF,
                 overlap_tol: float = KERNEL_OVERLAP_TOL) -> float:
    """<V, [rho]_Lambda^{-1} V> under the pseudo-inverse convention.

    Spectrally this is sum |<V, W_k>|^2 / lam_k over eigenpairs of the
    positive operator [rho]_Lambda.  Components of V overlapping the
    numerical kernel (eigenvalues below kernel_cutoff times the largest)
    make the value +inf.
    """
    V = _check_field(conn, V)
    w, U = _psd_spectrum(rho)
    n = rho.shape[0]
    T = np.einsum("mk,jmn,nl->jkl", U.conj(), V, U)
    M = np.stack([ker.grid(w) for ker in conn.kernels])
    vnorm_sq = float(np.sum(np.abs(T) ** 2).real / n)
    if vnorm_sq == 0.0:
        return 0.0
    cutoff = kernel_cutoff * max(float(np.max(M)), 1e-300)
    kernel_mask = M < cutoff
    overlap_sq = float(np.sum(np.abs(T[kernel_mask]) ** 2).real / n)
    if np.sqrt(overlap_sq) > overlap_tol * np.sqrt(vnorm_sq):
        return float("inf")
    kept = ~kernel_mask
    return float(np.sum(np.abs(T[kept]) ** 2 / M[kept]).real / n)


def frechet_quadform(conn: ConnectionFamily, B: np.ndarray, A: np.ndarray, V: np.ndarray,
                     rel_step: float = 1e-5) -> float:
    """Directional derivative <V, (d[.]_Lambda(B)[A]) V> by central differences.

    One Richardson extrapolation step on the symmetric difference of
    s -> <V, [B + s A]_Lambda V> at s = 0.  For strictly positive A, B the
    value dominates <V, [A]_Lambda V>, with equality at A = B.
    """
    A = require_hermitian(A, name="direction")
    B = require_hermitian(B, name="base point")
    if np.linalg.eigvalsh(A)[0] <= 0.0 or np.linalg.eigvalsh(B)[0] <= 0.0:
        raise DomainError("frechet_quadform requires strictly positive matrices")
    h = rel_step * np.linalg.norm(B) / max(np.linalg.norm(A), 1e-300)

    def phi(s: float) -> float:
        return weighted_norm_sq(conn, B + s * A, V)

    def central(step: float) -> float:
        return (phi(step) - phi(-step)) / (2.0 * step)

    d1 = central(h)
    d2 = central(h / 2.0)
    return (4.0 * d2 - d1) / 3.0


def connection_matrix_mean(kernel: MeanKernel, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """The operator connection Lambda(A, B) of two positive matrices.

    Computed in the standard transfer form A^{1/2} f(A^{-1/2} B A^{-1/2})
    A^{1/2} with representing function f(x) = m(1, x); for commuting
    arguments this coincides with the scalar kernel applied spectrally.
    """
    A = require_hermitian(A, name="A")
    B = require_hermitian(B, name="B")
    if np.linalg.eigvalsh(A)[0] <= 0.0:
        raise DomainError("matrix mean requires the first argument strictly positive")
    if np.linalg.eigvalsh(B)[0] < 0.0:
        raise DomainError("matrix mean requires the second argument positive")
    root = matfunc(A, np.sqrt)
    root_inv = matfunc(A, lambda x: 1.0 / np.sqrt(x))
    inner = require_hermitian(root_inv @ B @ root_inv, tol=1e-8)
    mean = matfunc(inner, lambda x: kernel.ext(np.ones_like(x), x))
    out = root @ mean @ root
    return 0.5 * (out + out.conj().T)


@dataclass(frozen=True)
class AxiomReport:
    """Worst-case margins from the randomized operator-connection audit.

    Margins are smallest eigenvalues of the matrix inequalities, so the
    axioms hold when every margin is >= -tolerance; continuity_gap is the
    terminal distance of the decreasing sequence from its limit.
    """

    monotonicity: float
    transformer: float
    continuity_monotone: float
    continuity_gap: float

    def passed(self, tol: float = 1e-9, gap_tol: float = 1e-3) -> bool:
        return (
            self.monotonicity >= -tol
            and self.transformer >= -tol
            and self.continuity_monotone >= -tol
            and self.continuity_gap <= gap_tol
        )


def connection_axioms(kernel: MeanKernel, trials: int = 100, dim: int = 3,
                      seed: int = 0) -> AxiomReport:
    """Randomized audit of the operator-connection axioms for one kernel.

    Checks joint monotonicity, the transformer inequality for Hermitian
    invertible C, and continuity from above along A + delta_k with a
    geometrically decreasing delta.
    """
    rng = np.random.default_rng(seed)

    def rand_pos() -> np.ndarray:
        M = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        return M @ M.conj().T + 0.3 * np.eye(dim)

    def rand_herm_invertible() -> np.ndarray:
        M = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        H = 0.5 * (M + M.conj().T)
        w, U = np.linalg.eigh(H)
        w = np.sign(w) * np.maximum(np.abs(w), 0.2)
        return (U * w) @ U.conj().T

    mono = np.inf
    trans = np.inf
    cont_mono = np.inf
    cont_gap = 0.0
    deltas = [2.0 ** (-k) for k in range(0, 17)]
    for trial in range(trials):
        A, B = rand_pos(), rand_pos()
        P, Q = rand_pos(), rand_pos()
        lam = connection_matrix_mean(kernel, A, B)
        upper = connection_matrix_mean(kernel, A + P, B + Q)
        mono = min(mono, float(np.linalg.eigvalsh(upper - lam)[0]))

        C = rand_herm_invertible()
        lhs = C @ lam @ C
        rhs = connection_matrix_mean(kernel, C @ A @ C, C @ B @ C)
        trans = min(trans, float(np.linalg.eigvalsh(rhs - lhs)[0]))

        if trial < max(1, trials // 10):
            eye = np.eye(dim)
            seq = [connection_matrix_mean(kernel, A + d * eye, B + d * eye) for d in deltas]
            for prev, curr in zip(seq, seq[1:]):
                cont_mono = min(cont_mono, float(np.linalg.eigvalsh(prev - curr)[0]))
            cont_gap = max(cont_gap, float(np.linalg.norm(seq[-1] - lam)))
    return AxiomReport(
        monotonicity=mono,
        transformer=trans,
        continuity_monotone=cont_mono,
        continuity_gap=cont_gap,
    )


def monotone_inverse_convergence(conn: ConnectionFamily, rho: np.ndarray, V: np.ndarray,
                                 steps: int = 7, start: float = 1.0,
                                 growth: float = 10.0) -> np.ndarray:
    """Values <V, ([rho]_Lambda + 1/nu)^{-1} V> along a geometric nu-schedule.

    The regularized operators decrease to [rho]_Lambda as nu grows, so the
    quadratic forms increase monotonically to the pseudo-inverse value
    (diverging exactly when that value is +inf).
    """
    V = _check_field(conn, V)
    w, U = _psd_spectrum(rho)
    n = rho.shape[0]
    T = np.einsum("mk,jmn,nl->jkl", U.conj(), V, U)
    M = np.stack([ker.grid(w) for ker in conn.kernels])
    T2 = np.abs(T) ** 2
    nus = start * growth ** np.arange(steps)
    return np.array([float(np.sum(T2 / (M + 1.0 / nu)).real / n) for nu in nus])


def field_inner(V: np.ndarray, W: np.ndarray) -> complex:
    """Inner product on jump-indexed fields, summing the GNS pairing per component."""
    V = np.asarray(V, dtype=complex)
    W = np.asarray(W, dtype=complex)
    if V.shape != W.shape:
        raise ValidationError(f"field shapes differ: {V.shape} vs {W.shape}")
    return complex(sum(gns_inner(v, w) for v, w in zip(V, W)))


def field_norm(V: np.ndarray) -> float:
    return float(np.sqrt(max(field_inner(V, V).real, 0.0)))
