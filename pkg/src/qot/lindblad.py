"""Detailed-balance Lindblad generators in canonical (Alicki) jump form.

A jump operator set is the data {sigma, (V_j, omega_j), j -> j*} of an
invariant density, GNS-orthonormal traceless jump operators with Bohr
frequencies, and the index involution pairing each jump with its adjoint.
The induced generator

    L(A) = sum_j ( e^{-omega_j/2} V_j* [A, V_j] - e^{omega_j/2} [A, V_j] V_j* )

is unital, annihilates 1, and satisfies detailed balance with respect to
sigma.  This module validates such data, builds the generator and its trace
adjoint, exponentiates the semigroup, and provides preset model families.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .exceptions import DomainError, ValidationError
from .gns_linalg import (
    SuperOperator,
    gns_norm,
    hermitian_traceless_basis,
    ntrace,
    require_hermitian,
    superop_adjoint,
    superop_matrix,
    vec,
)


@dataclass(frozen=True)
class JumpOperatorSet:
    """Jump data {(V_j, omega_j)} with invariant density sigma and involution j -> j*.

    All arrays are frozen after construction; instances are safe to share
    across workers.
    """

    sigma: np.ndarray
    vs: np.ndarray          # shape (J, n, n)
    omegas: np.ndarray      # shape (J,)
    involution: np.ndarray  # shape (J,), permutation with inv o inv = id

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=complex)
        vs = np.asarray(self.vs, dtype=complex)
        omegas = np.asarray(self.omegas, dtype=float)
        involution = np.asarray(self.involution, dtype=int)
        if vs.ndim != 3 or vs.shape[1] != vs.shape[2]:
            raise ValidationError(f"jump operators must be a (J, n, n) stack, got {vs.shape}")
        if sigma.shape != vs.shape[1:]:
            raise ValidationError("sigma dimension does not match jump operators")
        if omegas.shape != (vs.shape[0],) or involution.shape != (vs.shape[0],):
            raise ValidationError("omegas and involution must have one entry per jump")
        if sorted(involution.tolist()) != list(range(vs.shape[0])):
            raise ValidationError("involution is not a permutation of the jump indices")
        if not np.array_equal(involution[involution], np.arange(vs.shape[0])):
            raise ValidationError("involution is not its own inverse")
        for arr in (sigma, vs, omegas, involution):
            arr.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "vs", vs)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "involution", involution)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def size(self) -> int:
        return self.vs.shape[0]


@dataclass(frozen=True)
class ValidationReport:
    """Per-condition residuals from validate_jump_set."""

    residuals: dict[str, float]
    tol: float = 1e-10

    @property
    def worst(self) -> float:
        return max(self.residuals.values())

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol


def validate_jump_set(js: JumpOperatorSet, tol: float = 1e-10) -> ValidationReport:
    """Check the canonical-form conditions and report the residual of each.

    Conditions: GNS orthonormality tau(V_j* V_k) = delta_jk, tracelessness,
    the involution storing exact adjoints with antisymmetric Bohr
    frequencies, and the sigma-conjugation relation
    sigma V_j sigma^{-1} = e^{-omega_j} V_j.
    """
    sigma = require_hermitian(js.sigma, name="sigma")
    w = np.linalg.eigvalsh(sigma)
    if w[0] <= 0.0:
        raise DomainError(f"sigma must be strictly positive, smallest eigenvalue {w[0]:.3e}")
    if abs(ntrace(sigma).real - 1.0) > 1e-8:
        raise DomainError("sigma must have normalized trace 1")

    J = js.size
    gram = np.einsum("jmn,kmn->jk", js.vs.conj(), js.vs) / js.dim
    orth = float(np.max(np.abs(gram - np.eye(J))))
    traceless = float(max(abs(ntrace(V)) for V in js.vs))
    adj = float(max(gns_norm(js.vs[js.involution[j]] - js.vs[j].conj().T) for j in range(J)))
    bohr = float(np.max(np.abs(js.omegas[js.involution] + js.omegas)))
    sigma_inv = np.linalg.inv(sigma)
    conj = float(
        max(
            gns_norm(sigma @ js.vs[j] @ sigma_inv - np.exp(-js.omegas[j]) * js.vs[j])
            for j in range(J)
        )
    )
    return ValidationReport(
        residuals={
            "gns_orthonormality": orth,
            "tracelessness": traceless,
            "involution_adjoint": adj,
            "bohr_antisymmetry": bohr,
            "sigma_conjugation": conj,
        },
        tol=tol,
    )


def apply_generator(js: JumpOperatorSet, A: np.ndarray) -> np.ndarray:
    """Direct evaluation of L(A) from the jump data."""
    A = np.asarray(A, dtype=complex)
    out = np.zeros_like(A)
    for V, om in zip(js.vs, js.omegas):
        comm = A @ V - V @ A
        out += np.exp(-om / 2.0) * (V.conj().T @ comm) - np.exp(om / 2.0) * (comm @ V.conj().T)
    return out


@dataclass(frozen=True)
class Generator:
    """Generator L (on observables) and its GNS trace adjoint (on densities)."""

    jump_set: JumpOperatorSet
    forward: SuperOperator
    adjoint: SuperOperator

    @property
    def dim(self) -> int:
        return self.forward.dim

    def apply(self, A: np.ndarray) -> np.ndarray:
        return self.forward.apply(A)

    def apply_adjoint(self, X: np.ndarray) -> np.ndarray:
        return self.adjoint.apply(X)


def build_generator(js: JumpOperatorSet, validate: bool = True, tol: float = 1e-10) -> Generator:
    """Assemble the generator superoperator and its trace adjoint.

    Construction asserts unitality L(1) = 0 and invariance of sigma under
    the adjoint flow, the two structural identities every detailed-balance
    generator must satisfy.
    """
    forward = superop_matrix(lambda A: apply_generator(js, A), js.dim)
    adjoint = superop_adjoint(forward)
    gen = Generator(js, forward, adjoint)
    if validate:
        report = validate_jump_set(js)
        if not report.passed:
            raise ValidationError(f"invalid jump operator set: residuals {report.residuals}")
        n = js.dim
        scale = max(1.0, float(np.linalg.norm(forward.matrix)))
        if gns_norm(gen.apply(np.eye(n))) > tol * scale:
            raise ValidationError("generator does not annihilate the identity")
        if gns_norm(gen.apply_adjoint(js.sigma)) > tol * scale:
            raise ValidationError("sigma is not invariant under the adjoint flow")
    return gen


def semigroup(gen: Generator, t: float) -> SuperOperator:
    """The semigroup element exp(t L) as a superoperator (t >= 0)."""
    if t < 0:
        raise DomainError(f"semigroup time must be nonnegative, got {t}")
    return SuperOperator(gen.dim, expm(t * gen.forward.matrix))


def check_dbc(js: JumpOperatorSet, samples: int = 20, gen: Generator | None = None, seed: int = 0) -> float:
    """Max residual of detailed balance tau((P_t A)* B sigma) = tau(A* (P_t B) sigma).

    Checks the infinitesimal form (with L in place of P_t) on random
    Hermitian pairs and the integrated form at t in {0.1, 1}.
    """
    if gen is None:
        gen = build_generator(js, validate=False)
    n = js.dim
    sigma = js.sigma
    rng = np.random.default_rng(seed)

    def _rand_herm() -> np.ndarray:
        M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        H = 0.5 * (M + M.conj().T)
        return H / max(gns_norm(H), 1e-300)

    worst = 0.0
    maps = [("inf", gen.forward.matrix)]
    maps += [(f"t={t}", expm(t * gen.forward.matrix)) for t in (0.1, 1.0)]
    for _ in range(samples):
        A = _rand_herm()
        B = _rand_herm()
        for _, M in maps:
            KA = M @ vec(A)
            KB = M @ vec(B)
            lhs = ntrace(KA.reshape(n, n).conj().T @ B @ sigma)
            rhs = ntrace(A.conj().T @ KB.reshape(n, n) @ sigma)
            worst = max(worst, abs(lhs - rhs))
    return worst


def check_ergodic(gen: Generator, rel_tol: float = 1e-8) -> tuple[bool, int]:
    """Numerical kernel dimension of L; ergodic iff it equals one."""
    svals = np.linalg.svd(gen.forward.matrix, compute_uv=False)
    cutoff = rel_tol * max(float(svals[0]), 1e-300)
    kdim = int(np.sum(svals < cutoff))
    return kdim == 1, kdim


def choi_matrix(K: SuperOperator) -> np.ndarray:
    """Choi matrix sum_kl E_kl (x) K(E_kl); positive semidefinite iff K is CP."""
    n = K.dim
    C = np.zeros((n * n, n * n), dtype=complex)
    for k in range(n):
        for l in range(n):
            E = np.zeros((n, n), dtype=complex)
            E[k, l] = 1.0
            C[k * n:(k + 1) * n, l * n:(l + 1) * n] = K.apply(E)
    return 0.5 * (C + C.conj().T)


def check_cp(gen: Generator, t: float) -> float:
    """Smallest Choi eigenvalue of the semigroup element at time t."""
    P = semigroup(gen, t)
    return float(np.linalg.eigvalsh(choi_matrix(P))[0])


# ---------------------------------------------------------------------------
# Preset model families
# ---------------------------------------------------------------------------

def depolarizing(n: int) -> JumpOperatorSet:
    """Fully depolarizing family: sigma = 1, all Bohr frequencies zero.

    The jumps are the n^2 - 1 GNS-orthonormal traceless Hermitian basis
    elements, each self-adjoint, so the involution is the identity.
    """
    if n < 2:
        raise DomainError("depolarizing preset needs dimension >= 2")
    vs = hermitian_traceless_basis(n)
    J = vs.shape[0]
    return JumpOperatorSet(
        sigma=np.eye(n, dtype=complex),
        vs=vs,
        omegas=np.zeros(J),
        involution=np.arange(J),
    )


def two_point(p: float) -> JumpOperatorSet:
    """Two-state jump pair with stationary weights (p, 1 - p).

    sigma = diag(2p, 2(1-p)), V_1 = sqrt(2) E_12, V_2 = sqrt(2) E_21, and
    omega_1 = log((1-p)/p) so that sigma V_1 sigma^{-1} = e^{-omega_1} V_1.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"two_point weight must lie in (0, 1), got {p}")
    return dephasing_free_chain(2, [p, 1.0 - p])


def dephasing_free_chain(k: int, weights) -> JumpOperatorSet:
    """Diagonal embedding of a reversible k-state chain with matrix-unit jumps.

    With stationary distribution pi proportional to the given weights, set
    sigma = diag(k pi) and for every ordered pair (i, j), i != j, include
    the jump V_(i,j) = sqrt(k) E_ij with omega_(i,j) = log(pi_j / pi_i).
    The involution swaps (i, j) with (j, i).  No diagonal (pure dephasing)
    jumps appear, and the diagonal sector evolves as a reversible chain with
    rates 2k sqrt(pi_j / pi_i).
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (k,):
        raise DomainError(f"expected {k} weights, got shape {weights.shape}")
    if np.any(weights <= 0.0):
        raise DomainError("chain weights must be strictly positive")
    pi = weights / weights.sum()
    pairs = [(i, j) for i in range(k) for j in range(k) if i != j]
    vs = np.zeros((len(pairs), k, k), dtype=complex)
    omegas = np.zeros(len(pairs))
    involution = np.zeros(len(pairs), dtype=int)
    index = {pair: a for a, pair in enumerate(pairs)}
    for a, (i, j) in enumerate(pairs):
        vs[a, i, j] = np.sqrt(k)
        omegas[a] = np.log(pi[j] / pi[i])
        involution[a] = index[(j, i)]
    return JumpOperatorSet(
        sigma=np.diag(k * pi).astype(complex),
        vs=vs,
        omegas=omegas,
        involution=involution,
    )


_PRESETS = {
    "depolarizing": lambda params: depolarizing(int(params["n"])),
    "two_point": lambda params: two_point(float(params["p"])),
    "dephasing_free_chain": lambda params: dephasing_free_chain(int(params["k"]), params["weights"]),
}


def preset(name: str, **params) -> JumpOperatorSet:
    """Look up a preset family by name: depolarizing(n), two_point(p), dephasing_free_chain(k, weights)."""
    if name not in _PRESETS:
        raise DomainError(f"unknown preset '{name}'; available: {sorted(_PRESETS)}")
    return _PRESETS[name](params)
