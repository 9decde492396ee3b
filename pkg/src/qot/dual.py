"""Dual solver over discretized Hamilton-Jacobi-Bellmann subsolutions.

A discrete subsolution is a path of Hermitian node potentials A_0..A_N
whose every interval satisfies

    sup_rho  tau((Adot + eps L A_mid) rho) + 1/2 <grad A_mid, [rho]_Lambda grad A_mid>  <=  0,

the supremum running over all densities.  The map rho -> [rho]_Lambda is
concave, so the interval supremum is a concave maximization over the
spectral density set and projected gradient ascent reaches the global
value.  The dual objective tau(A_N rho1 - A_0 rho0) is pushed up by a
quadratic-penalty ascent on the violations; a final certification step
re-solves every interval supremum from fresh starts and, if needed,
restores feasibility by the affine-in-time identity shift, which lowers
the objective by exactly the worst violation and so always returns a valid
lower bound on half the squared distance.

The forward difference in time and the midpoint potential mirror the
primal discretization, which makes the discrete weak duality inequality
exact: half of any feasible primal action dominates every feasible dual
objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, ValidationError
from .gns_linalg import gns_norm, hermitian_basis, ntrace, require_hermitian
from .lindblad import build_generator
from .primal import PrimalSolution, TransportProblem
from .projections import project_density_batch

GM_TOL = 1e-9
FEASIBILITY_TOL = 1e-7
FD_RHO_STEP = 1e-6


@dataclass(frozen=True)
class DualSolution:
    """Feasible node potentials with objective and certification data."""

    node_potentials: np.ndarray    # (N+1, n, n)
    objective: float
    worst_violation: float
    witness_densities: np.ndarray  # (N, n, n)
    iterations: int
    feasible: bool
    converged: bool
    problem: TransportProblem


class _HJBEngine:
    """Batched evaluation and maximization of the per-interval constraint."""

    def __init__(self, problem: TransportProblem):
        self.problem = problem
        js = problem.jump_set
        self.n = js.dim
        self.N = problem.grid_n
        self.dt = 1.0 / problem.grid_n
        self.vs = js.vs
        gen = build_generator(js, validate=False)
        self.L = gen.forward.matrix
        self.Ladj = gen.adjoint.matrix
        self.kernels = problem.connection.kernels
        self.arithmetic = problem.connection.name == "arithmetic"
        self.basis = hermitian_basis(self.n)
        self.eps = problem.epsilon

    # -- assembly ----------------------------------------------------------

    def interval_data(self, A_path: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linear coefficient H_i and gradient field of A_mid per interval."""
        A = np.asarray(A_path, dtype=complex)
        Adot = (A[1:] - A[:-1]) / self.dt
        Amid = 0.5 * (A[1:] + A[:-1])
        Hlin = Adot
        if self.eps > 0.0:
            LA = (Amid.reshape(Amid.shape[0], -1) @ self.L.T).reshape(Amid.shape)
            Hlin = Hlin + self.eps * LA
        Gf = (np.einsum("jxy,byz->bjxz", self.vs, Amid)
              - np.einsum("bxy,jyz->bjxz", Amid, self.vs))
        return Hlin, Gf

    # -- constraint objective ----------------------------------------------

    def quad_values(self, rho: np.ndarray, Gf: np.ndarray) -> np.ndarray:
        """<grad A_mid, [rho]_Lambda grad A_mid> per batch instance."""
        w, U = np.linalg.eigh(0.5 * (rho + rho.conj().transpose(0, 2, 1)))
        w = np.maximum(w, 0.0)
        M = np.stack([ker.grid(w) for ker in self.kernels], axis=1)
        Uc = U.conj().transpose(0, 2, 1)[:, None]
        T = Uc @ Gf @ U[:, None]
        return np.sum(M * np.abs(T) ** 2, axis=(1, 2, 3)).real / self.n

    def c_values(self, rho: np.ndarray, Hlin: np.ndarray, Gf: np.ndarray) -> np.ndarray:
        lin = np.real(np.einsum("bmn,bnm->b", Hlin, rho)) / self.n
        return lin + 0.5 * self.quad_values(rho, Gf)

    def c_gradients(self, rho: np.ndarray, Hlin: np.ndarray, Gf: np.ndarray) -> np.ndarray:
        """Hermitian gradients of the constraint objective in the tau pairing.

        For the arithmetic family the quadratic part is linear in rho with
        an explicit coefficient; otherwise central finite differences over
        an orthonormal Hermitian basis.
        """
        if self.arithmetic:
            GGd = np.einsum("bjxy,bjzy->bxz", Gf, Gf.conj())
            GdG = np.einsum("bjyx,bjyz->bxz", Gf.conj(), Gf)
            quad_grad = 0.5 * (GGd + GdG)
            return Hlin + 0.5 * quad_grad
        B = rho.shape[0]
        nb = self.basis.shape[0]
        h = FD_RHO_STEP * float(self.n)
        probes = (rho[:, None, None] +
                  np.array([h, -h])[None, :, None, None, None] * self.basis[None, None])
        probes = probes.reshape(B * 2 * nb, self.n, self.n)
        Gf_rep = np.repeat(Gf, 2 * nb, axis=0)
        vals = self.quad_values(probes, Gf_rep).reshape(B, 2, nb)
        gamma = (vals[:, 0, :] - vals[:, 1, :]) / (2.0 * h)
        quad_grad = np.einsum("ba,amn->bmn", gamma, self.basis)
        return Hlin + 0.5 * quad_grad

    # -- concave maximization over the density set --------------------------

    def sup_batch(self, Hlin: np.ndarray, Gf: np.ndarray, starts: np.ndarray,
                  gm_tol: float = GM_TOL, max_iter: int = 300, stall_limit: int = 8,
                  stall_tol: float = 1e-13):
        """Projected gradient ascent; returns (values, witnesses, iterations).

        Convergence is declared per instance on a small gradient-mapping
        norm or when the value stops improving for stall_limit consecutive
        iterations; the latter covers suprema attained on the spectral
        boundary, where log-mean weights have unbounded radial slope and
        the gradient mapping cannot settle.
        """
        rho = project_density_batch(np.asarray(starts, dtype=complex))
        B = rho.shape[0]
        vals = self.c_values(rho, Hlin, Gf)
        alpha = np.ones(B)
        converged = np.zeros(B, dtype=bool)
        stalls = np.zeros(B, dtype=int)
        sqrt_n = np.sqrt(self.n)
        it = 0
        for it in range(1, max_iter + 1):
            if converged.all():
                break
            g = self.c_gradients(rho, Hlin, Gf)
            accepted = converged.copy()
            trial_rho = rho.copy()
            trial_vals = vals.copy()
            used_alpha = alpha.copy()
            for _ in range(45):
                if accepted.all():
                    break
                idx = ~accepted
                cand = project_density_batch(rho[idx] + alpha[idx, None, None] * g[idx])
                cv = self.c_values(cand, Hlin[idx], Gf[idx])
                ok = cv >= vals[idx] - 1e-14 * (1.0 + np.abs(vals[idx]))
                sub = np.where(idx)[0]
                good = sub[ok]
                trial_rho[good] = cand[ok]
                trial_vals[good] = cv[ok]
                used_alpha[good] = alpha[good]
                accepted[good] = True
                bad = sub[~ok]
                alpha[bad] *= 0.5
                tiny = bad[alpha[bad] < 1e-13]
                converged[tiny] = True
                accepted[tiny] = True
            step = trial_rho - rho
            step_norm = np.linalg.norm(step.reshape(B, -1), axis=1) / sqrt_n
            gm = step_norm / np.maximum(used_alpha, 1e-300)
            improvement = trial_vals - vals
            stalled = improvement <= stall_tol * (1.0 + np.abs(vals))
            stalls = np.where(stalled, stalls + 1, 0)
            rho, vals = trial_rho, trial_vals
            alpha = np.minimum(used_alpha * 2.0, 1e8)
            converged |= gm < gm_tol
            converged |= stalls >= stall_limit
        return vals, rho, it


def hjb_violation(problem: TransportProblem, A_pair, start: np.ndarray | None = None,
                  restarts: int = 1, seed: int = 0) -> tuple[float, np.ndarray]:
    """Supremum of the interval constraint over densities, with its witness.

    A_pair is the (A_i, A_{i+1}) node pair of one interval; extra random
    restarts guard the ascent against flat starts.
    """
    engine = _HJBEngine(problem)
    A0 = require_hermitian(np.asarray(A_pair[0], dtype=complex), name="A_i")
    A1 = require_hermitian(np.asarray(A_pair[1], dtype=complex), name="A_{i+1}")
    path = np.stack([A0, A1])
    Hlin, Gf = engine.interval_data(path)
    n = engine.n
    starts = [np.eye(n, dtype=complex) if start is None else np.asarray(start, dtype=complex)]
    rng = np.random.default_rng(seed)
    for _ in range(max(0, restarts - 1)):
        M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        starts.append(0.5 * (M + M.conj().T))
    S = len(starts)
    vals, witnesses, _ = engine.sup_batch(
        np.repeat(Hlin, S, axis=0),
        np.repeat(Gf, S, axis=0),
        np.stack(starts),
    )
    best = int(np.argmax(vals))
    return float(vals[best]), witnesses[best]


def violations_path(problem: TransportProblem, A_path: np.ndarray,
                    witnesses: np.ndarray | None = None,
                    engine: _HJBEngine | None = None,
                    max_iter: int = 300, stall_limit: int = 8,
                    stall_tol: float = 1e-13):
    """All interval suprema of a node-potential path in one batched ascent."""
    if engine is None:
        engine = _HJBEngine(problem)
    Hlin, Gf = engine.interval_data(A_path)
    if witnesses is None:
        witnesses = np.broadcast_to(np.eye(engine.n, dtype=complex), Gf[:, 0].shape).copy()
    vals, wit, _ = engine.sup_batch(Hlin, Gf, witnesses, max_iter=max_iter,
                                    stall_limit=stall_limit, stall_tol=stall_tol)
    return vals, wit


def certify_feasibility(problem: TransportProblem, A_path: np.ndarray, restarts: int = 5,
                        seed: int = 0, engine: _HJBEngine | None = None):
    """Max interval violations over fresh random ascent restarts.

    Returns (per-interval worst values, per-interval best witnesses).
    """
    if engine is None:
        engine = _HJBEngine(problem)
    n, N = engine.n, engine.N
    rng = np.random.default_rng(seed)
    Hlin, Gf = engine.interval_data(A_path)
    starts = [np.broadcast_to(np.eye(n, dtype=complex), (N, n, n))]
    for _ in range(max(0, restarts - 1)):
        M = rng.standard_normal((N, n, n)) + 1j * rng.standard_normal((N, n, n))
        starts.append(0.5 * (M + M.conj().transpose(0, 2, 1)))
    S = len(starts)
    vals, wit, _ = engine.sup_batch(
        np.tile(Hlin, (S, 1, 1)),
        np.tile(Gf, (S, 1, 1, 1)),
        np.concatenate(starts),
    )
    vals = vals.reshape(S, N)
    wit = wit.reshape(S, N, n, n)
    best = np.argmax(vals, axis=0)
    return vals.max(axis=0), wit[best, np.arange(N)]


def dual_objective(A_path: np.ndarray, rho0: np.ndarray, rho1: np.ndarray) -> float:
    """tau(A_N rho1) - tau(A_0 rho0)."""
    A = np.asarray(A_path, dtype=complex)
    return float((ntrace(A[-1] @ rho1) - ntrace(A[0] @ rho0)).real)


def _gauge_fix(A_path: np.ndarray) -> np.ndarray:
    """Shift all nodes by a multiple of the identity so tau(A_0) = 0."""
    shift = ntrace(A_path[0]).real
    n = A_path.shape[-1]
    return A_path - shift * np.eye(n, dtype=complex)


def _scalar_tighten(A_path: np.ndarray, violations: np.ndarray, dt: float,
                    pad: float = 0.0) -> np.ndarray:
    """Remove positive violations by telescoped identity shifts.

    Adding a_i * 1 to node i changes interval i's constraint value by
    (a_{i+1} - a_i)/dt and the objective by a_N - a_0; choosing
    a_{i+1} = a_i - dt * max(v_i, 0) cancels each violation at objective
    cost dt * sum_i max(v_i, 0), never worse than the uniform shift by the
    worst violation.  A positive pad over-tightens each interval to absorb
    the ascent's certification noise.
    """
    drops = np.concatenate([[0.0], np.where(violations > 0.0, violations + pad, 0.0)])
    scalars = -dt * np.cumsum(drops)
    n = A_path.shape[-1]
    return A_path + scalars[:, None, None] * np.eye(n, dtype=complex)


def feasibilize(problem: TransportProblem, A_path: np.ndarray, restarts: int = 5,
                seed: int = 0, rounds: int = 6, pad: float = 1e-9,
                engine: _HJBEngine | None = None):
    """Certified feasible version of arbitrary node potentials.

    Alternates certification with padded scalar tightening until every
    interval supremum is nonpositive within the feasibility tolerance.
    Returns (potentials, worst violation, witnesses).
    """
    if engine is None:
        engine = _HJBEngine(problem)
    A = np.asarray(A_path, dtype=complex)
    vals, wit = certify_feasibility(problem, A, restarts=restarts, seed=seed, engine=engine)
    worst = float(np.max(vals))
    done = 0
    while worst > 0.0 and done < rounds:
        A = _scalar_tighten(A, vals, engine.dt, pad=pad)
        vals, wit = certify_feasibility(problem, A, restarts=restarts,
                                        seed=seed + done + 1, engine=engine)
        worst = float(np.max(vals))
        done += 1
    return A, worst, wit


def _warm_start_path(problem: TransportProblem, warm: PrimalSolution,
                     engine: _HJBEngine) -> np.ndarray:
    """Node reconstruction from primal midpoint potentials, tight at midpoints.

    The traceless parts telescope through A_0 := B_0, A_{i+1} := 2 B_i - A_i
    so interval midpoints reproduce the primal potentials.  The scalar
    parts are then chosen interval by interval so the constraint value at
    the primal midpoint density vanishes exactly; since densities have unit
    normalized trace, this shifts each interval's constraint objective by a
    constant and centers it at its expected argmax.
    """
    N = problem.grid_n
    n = problem.dim
    A = np.zeros((N + 1, n, n), dtype=complex)
    A[0] = warm.potential_path[0]
    for i in range(N):
        A[i + 1] = 2.0 * warm.potential_path[i] - A[i]
    Hlin, Gf = engine.interval_data(A)
    mids = 0.5 * (warm.rho_path[:-1] + warm.rho_path[1:])
    c_mid = engine.c_values(mids, Hlin, Gf)
    scalars = np.concatenate([[0.0], -engine.dt * np.cumsum(c_mid)])
    A = A + scalars[:, None, None] * np.eye(n, dtype=complex)
    return _gauge_fix(A)


def _danskin_gradient(engine: _HJBEngine, A_path: np.ndarray, vals: np.ndarray,
                      witnesses: np.ndarray, mu: float,
                      rho0: np.ndarray, rho1: np.ndarray) -> np.ndarray:
    """Gradient of objective - mu sum max(0, v_i)^2 via envelope differentiation.

    At the interval witness rho*, the constraint value is differentiable in
    the node pair with Hermitian gradients

        wrt A_i:      -rho*/dt + (eps/2) L'rho* - (1/2) div([rho*] grad A_mid)
        wrt A_{i+1}:  +rho*/dt + (eps/2) L'rho* - (1/2) div([rho*] grad A_mid)
    """
    from .connections import apply_connection
    from .derivation import divergence, grad as grad_field

    N = engine.N
    n = engine.n
    js = engine.problem.jump_set
    conn = engine.problem.connection
    G = np.zeros((N + 1, n, n), dtype=complex)
    G[-1] += rho1
    G[0] -= rho0
    active = vals > 0.0
    for i in np.where(active)[0]:
        rho_w = witnesses[i]
        Amid = 0.5 * (A_path[i] + A_path[i + 1])
        common = np.zeros((n, n), dtype=complex)
        if engine.eps > 0.0:
            common += 0.5 * engine.eps * (engine.Ladj @ rho_w.reshape(-1)).reshape(n, n)
        common -= 0.5 * divergence(js, apply_connection(conn, rho_w, grad_field(js, Amid)))
        factor = -2.0 * mu * vals[i]
        G[i] += factor * (common - rho_w / engine.dt)
        G[i + 1] += factor * (common + rho_w / engine.dt)
    G[0] -= ntrace(G[0]).real * np.eye(n)
    return G


def _fd_penalty_gradient(engine: _HJBEngine, A_path: np.ndarray, witnesses: np.ndarray,
                         mu: float, rho0, rho1, h: float = 1e-6) -> np.ndarray:
    """Finite-difference gradient of the penalized objective (reference mode).

    Quadratically more expensive than the envelope form; retained for
    cross-checking on small instances.
    """
    N1, n, _ = A_path.shape

    def phi(A):
        vals, _ = violations_path(engine.problem, A, witnesses.copy(), engine=engine, max_iter=200)
        return dual_objective(A, rho0, rho1) - mu * float(np.sum(np.maximum(vals, 0.0) ** 2))

    basis = hermitian_basis(n)
    G = np.zeros_like(A_path)
    for i in range(N1):
        for a, Ba in enumerate(basis):
            Ap = A_path.copy()
            Ap[i] = A_path[i] + h * Ba
            Am = A_path.copy()
            Am[i] = A_path[i] - h * Ba
            G[i] += (phi(Ap) - phi(Am)) / (2.0 * h) * Ba
    G[0] -= ntrace(G[0]).real * np.eye(n)
    return G


def solve_dual(problem: TransportProblem, warm_start: PrimalSolution | None = None,
               seed: int = 0, gradient_mode: str = "danskin",
               stage_iters: int = 8, certify_restarts: int = 5) -> DualSolution:
    """Quadratic-penalty ascent over node potentials, then certification.

    The penalty weight grows tenfold from 1 to 1e6; each stage runs
    backtracking gradient ascent with envelope (or finite-difference)
    gradients.  The returned solution is always certified: interval suprema
    are re-solved from fresh random starts, and any remaining violation is
    removed by subtracting violation * t * identity from the path, at an
    objective cost equal to the violation.
    """
    if gradient_mode not in ("danskin", "fd"):
        raise DomainError(f"unknown gradient mode {gradient_mode!r}")
    engine = _HJBEngine(problem)
    rho0, rho1 = problem.rho0, problem.rho1
    N, n = engine.N, engine.n
    if warm_start is None:
        # a primal solve is cheap at desk scale and its potentials start the
        # ascent close to the optimum; cold-from-zero penalty ascent would
        # need orders of magnitude more iterations
        from .primal import solve_primal

        warm_start = solve_primal(problem)
    A = _warm_start_path(problem, warm_start, engine)
    candidates = [A.copy(), np.zeros((N + 1, n, n), dtype=complex)]
    witnesses = np.broadcast_to(np.eye(n, dtype=complex), (N, n, n)).copy()
    iterations = 0
    converged = True
    ascent_iter_cap = 40
    beta = 1.0
    for mu in 10.0 ** np.arange(0, 7):
        vals, witnesses = violations_path(problem, A, witnesses, engine=engine,
                                          max_iter=ascent_iter_cap, stall_limit=4,
                                          stall_tol=1e-10)
        phi = dual_objective(A, rho0, rho1) - mu * float(np.sum(np.maximum(vals, 0.0) ** 2))
        stalls = 0
        beta = max(beta, 1.0 / mu)
        for _ in range(stage_iters):
            iterations += 1
            if gradient_mode == "danskin":
                G = _danskin_gradient(engine, A, vals, witnesses, mu, rho0, rho1)
            else:
                G = _fd_penalty_gradient(engine, A, witnesses, mu, rho0, rho1)
            gnorm = float(np.linalg.norm(G))
            if gnorm < 1e-12:
                break
            accepted = False
            for _ in range(20):
                A_try = _gauge_fix(A + beta * G)
                vals_try, wit_try = violations_path(problem, A_try, witnesses.copy(),
                                                    engine=engine, max_iter=ascent_iter_cap,
                                                    stall_limit=4, stall_tol=1e-10)
                phi_try = (dual_objective(A_try, rho0, rho1)
                           - mu * float(np.sum(np.maximum(vals_try, 0.0) ** 2)))
                if phi_try > phi + 1e-12:
                    accepted = True
                    break
                beta *= 0.5
                if beta < 1e-13:
                    break
            if not accepted:
                break
            improvement = phi_try - phi
            A, vals, witnesses, phi = A_try, vals_try, wit_try, phi_try
            beta = min(beta * 1.6, 1e3)
            if improvement < 1e-8 * (1.0 + abs(phi)):
                stalls += 1
                if stalls >= 2:
                    break
            else:
                stalls = 0
    candidates.append(A.copy())

    # certification and feasibility restoration; keep the best certified value
    best = None
    for cand_seed, cand in enumerate(candidates):
        cand, worst, wit = feasibilize(problem, cand, restarts=certify_restarts,
                                       seed=seed + 101 * cand_seed, rounds=5,
                                       pad=0.0, engine=engine)
        obj = dual_objective(cand, rho0, rho1)
        entry = (obj, worst, cand, wit)
        if best is None or obj > best[0]:
            best = entry
    obj, worst, A, cert_wit = best
    return DualSolution(
        node_potentials=A,
        objective=obj,
        worst_violation=worst,
        witness_densities=cert_wit,
        iterations=iterations,
        feasible=worst <= FEASIBILITY_TOL,
        converged=converged,
        problem=problem,
    )


def _same_problem(p: TransportProblem, q: TransportProblem) -> bool:
    return (
        p.jump_set is q.jump_set or (
            p.jump_set.dim == q.jump_set.dim
            and np.allclose(p.jump_set.vs, q.jump_set.vs)
            and np.allclose(p.jump_set.sigma, q.jump_set.sigma)
        )
    ) and (
        p.connection.name == q.connection.name
        and p.epsilon == q.epsilon
        and p.grid_n == q.grid_n
        and np.allclose(p.rho0, q.rho0)
        and np.allclose(p.rho1, q.rho1)
    )


def check_weak_duality(primal: PrimalSolution, dual: DualSolution) -> float:
    """Margin (1/2) action - objective; negative beyond 1e-6 means a bug."""
    if not _same_problem(primal.problem, dual.problem):
        raise DomainError("primal and dual solutions belong to different problems")
    return 0.5 * primal.action - dual.objective


def refine_potentials(A_path: np.ndarray) -> np.ndarray:
    """Piecewise-linear refinement of node potentials to twice the resolution."""
    A = np.asarray(A_path, dtype=complex)
    N = A.shape[0] - 1
    out = np.empty((2 * N + 1,) + A.shape[1:], dtype=complex)
    out[::2] = A
    out[1::2] = 0.5 * (A[:-1] + A[1:])
    return out
