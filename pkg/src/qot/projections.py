"""Euclidean projections onto simplices and spectral density sets.

Density projection diagonalizes, projects the eigenvalue vector onto
{lam >= floor, sum lam = n}, and reconstructs with the eigenvector order
returned by the eigensolver (which also breaks ties).  Batched variants
operate on stacked matrices in one call.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError


def simplex_project(v: np.ndarray, total: float = 1.0, floor: float = 0.0) -> np.ndarray:
    """Project a real vector onto {x >= floor, sum x = total}."""
    return simplex_project_batch(np.asarray(v, dtype=float)[None], total, floor)[0]


def simplex_project_batch(V: np.ndarray, total: float = 1.0, floor: float = 0.0) -> np.ndarray:
    """Row-wise simplex projection of a (batch, m) array."""
    V = np.asarray(V, dtype=float)
    m = V.shape[-1]
    radius = total - m * floor
    if radius <= 0.0:
        raise DomainError(f"floor {floor} leaves no feasible simplex of total {total}")
    Y = V - floor
    U = -np.sort(-Y, axis=-1)
    css = np.cumsum(U, axis=-1) - radius
    idx = np.arange(1, m + 1, dtype=float)
    cond = U - css / idx > 0.0
    k = np.sum(cond, axis=-1)
    k = np.maximum(k, 1)
    theta = np.take_along_axis(css, (k - 1)[..., None], axis=-1)[..., 0] / k
    return np.maximum(Y - theta[..., None], 0.0) + floor


def project_density(H: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Nearest density (normalized trace 1, spectrum >= floor) to a Hermitian matrix."""
    return project_density_batch(np.asarray(H, dtype=complex)[None], floor)[0]


def project_density_batch(Hs: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Batched density projection of stacked Hermitian matrices (B, n, n)."""
    Hs = np.asarray(Hs, dtype=complex)
    n = Hs.shape[-1]
    w, U = np.linalg.eigh(0.5 * (Hs + Hs.conj().transpose(0, 2, 1)))
    lam = simplex_project_batch(w, total=float(n), floor=floor)
    return np.einsum("bkm,bm,blm->bkl", U, lam, U.conj())
