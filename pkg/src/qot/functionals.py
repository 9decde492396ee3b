"""Entropy and Fisher-information functionals of strictly positive densities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .connections import kms_family, weighted_norm_sq
from .derivation import grad
from .gns_linalg import herm_log, ntrace, require_hermitian
from .lindblad import JumpOperatorSet


def rel_entropy(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Relative entropy tau(rho (log rho - log sigma)) of strictly positive densities."""
    rho = require_hermitian(rho, name="rho")
    sigma = require_hermitian(sigma, name="sigma")
    diff = herm_log(rho) - herm_log(sigma)
    return float(ntrace(rho @ diff).real)


def fisher_info(js: JumpOperatorSet, rho: np.ndarray) -> float:
    """Fisher information <[rho]_omega grad(log rho - log sigma), grad(...)>.

    Weighted by the KMS kernels bound to the Bohr frequencies of the jump
    set; vanishes exactly at rho = sigma.
    """
    rho = require_hermitian(rho, name="rho")
    G = herm_log(rho) - herm_log(js.sigma)
    return weighted_norm_sq(kms_family(js), rho, grad(js, G))


@dataclass(frozen=True)
class FunctionalReport:
    """Endpoint entropies and per-gridpoint Fisher information along a path."""

    entropy_start: float
    entropy_end: float
    fisher_values: tuple[float, ...]


def functional_report(js: JumpOperatorSet, rho_path: np.ndarray) -> FunctionalReport:
    """Evaluate the entropy/Fisher functionals along a discrete density path."""
    sigma = js.sigma
    return FunctionalReport(
        entropy_start=rel_entropy(rho_path[0], sigma),
        entropy_end=rel_entropy(rho_path[-1], sigma),
        fisher_values=tuple(fisher_info(js, rho) for rho in rho_path),
    )
