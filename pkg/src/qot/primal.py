"""Dynamic (Benamou-Brenier type) primal solver for the transport distance.

The squared distance is the minimal discrete action

    sum_i dt * <V_i, [rho_mid,i]_Lambda^{-1} V_i>

over paths of strictly positive densities satisfying the per-interval
continuity constraint (rho_{i+1} - rho_i)/dt + div V_i = eps L'rho_mid,i.
Velocities are eliminated exactly: on each interval the constrained
minimizer is the weighted gradient V_i = [rho_mid]_Lambda grad B_i of a
traceless potential, where the weighted Laplacian maps -B_i to the
constraint right-hand side.  The remaining reduced objective is convex in
the interior densities and minimized by projected gradient descent with
finite-difference gradients.

The entropic reformulation (solve_primal_becker_li) optimizes the same
functional with a drift-free constraint, an added squared-epsilon Fisher
term, and an entropy boundary correction; for KMS weights the two values
agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .connections import ConnectionFamily, apply_connection
from .derivation import divergence, grad
from .exceptions import DomainError, StructuralError, ValidationError
from .functionals import rel_entropy
from .gns_linalg import (
    gns_norm,
    herm_log,
    hermitian_traceless_basis,
    require_density,
    require_hermitian,
)
from .lindblad import JumpOperatorSet, build_generator
from .projections import project_density_batch, simplex_project_batch

DEFAULT_GRID = 16
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
DEFAULT_FLOOR = 1e-6
FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class TransportProblem:
    """Endpoints, weights, drift strength, and discretization of one instance."""

    jump_set: JumpOperatorSet
    connection: ConnectionFamily
    rho0: np.ndarray
    rho1: np.ndarray
    epsilon: float = 0.0
    grid_n: int = DEFAULT_GRID
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    positivity_floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        rho0 = require_density(self.rho0, strict=True, name="rho0")
        rho1 = require_density(self.rho1, strict=True, name="rho1")
        if rho0.shape[0] != self.jump_set.dim:
            raise ValidationError("endpoint dimension does not match the jump set")
        if self.epsilon < 0.0:
            raise DomainError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.grid_n < 2:
            raise DomainError(f"grid_n must be at least 2, got {self.grid_n}")
        if self.connection.size != self.jump_set.size:
            raise ValidationError("connection family size does not match the jump set")
        if self.connection.name == "kms":
            family_omegas = np.array([k.omega for k in self.connection.kernels], dtype=float)
            if not np.allclose(family_omegas, self.jump_set.omegas, atol=1e-12):
                raise ValidationError("KMS family frequencies must match the jump set's Bohr frequencies")
        rho0.setflags(write=False)
        rho1.setflags(write=False)
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "rho1", rho1)

    @property
    def dim(self) -> int:
        return self.jump_set.dim


@dataclass(frozen=True)
class PrimalSolution:
    """Optimal discrete path with eliminated velocities and potentials.

    `action` is the squared-distance estimate; `potential_path` holds the
    traceless midpoint potentials whose weighted gradients reproduce the
    velocities.
    """

    rho_path: np.ndarray        # (N+1, n, n)
    velocity_path: np.ndarray   # (N, J, n, n)
    potential_path: np.ndarray  # (N, n, n)
    action: float
    continuity_residual: float
    iterations: int
    converged: bool
    problem: TransportProblem


def init_path(problem: TransportProblem) -> np.ndarray:
    """Linear interpolation between the endpoints; strictly positive by convexity."""
    N = problem.grid_n
    t = np.linspace(0.0, 1.0, N + 1)
    return (1.0 - t)[:, None, None] * problem.rho0 + t[:, None, None] * problem.rho1


class _IntervalEvaluator:
    """Batched per-interval reduced actions for a fixed problem.

    mode 'drift' keeps the eps-drift in the constraint; mode 'entropic'
    removes it and adds the squared-epsilon Fisher penalty of the entropic
    reformulation.
    """

    def __init__(self, problem: TransportProblem, mode: str = "drift"):
        if mode not in ("drift", "entropic"):
            raise ValueError(f"unknown evaluator mode {mode!r}")
        self.problem = problem
        self.mode = mode
        js = problem.jump_set
        n = js.dim
        self.n = n
        self.dt = 1.0 / problem.grid_n
        self.basis = hermitian_traceless_basis(n)
        self.d = n * n - 1
        self.grads = np.stack([grad(js, B) for B in self.basis])  # (d, J, n, n)
        gen = build_generator(js, validate=False)
        self.adjoint_matrix = gen.adjoint.matrix
        self.kernels = problem.connection.kernels
        self.eps = problem.epsilon
        self.log_sigma = herm_log(js.sigma) if mode == "entropic" else None

    def node_from_coords(self, coords: np.ndarray) -> np.ndarray:
        """coords (B, d) -> Hermitian trace-n nodes (B, n, n)."""
        return np.eye(self.n, dtype=complex) + np.einsum("ba,amn->bmn", coords, self.basis)

    def coords_from_node(self, nodes: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("amn,bnm->ba", self.basis, nodes)) / self.n

    def interval_actions(self, left: np.ndarray, right: np.ndarray,
                         return_aux: bool = False):
        """Reduced action of each (left, right) node pair, batched.

        Returns per-interval values of <grad B, [rho_mid] grad B> (plus the
        Fisher term in entropic mode); multiply by dt for the contribution
        to the total action.
        """
        n = self.n
        Pm = 0.5 * (left + right)
        diff = (right - left) / self.dt
        if self.mode == "drift" and self.eps > 0.0:
            drift = (Pm.reshape(Pm.shape[0], -1) @ self.adjoint_matrix.T).reshape(Pm.shape)
            g = self.eps * drift - diff
        else:
            g = -diff
        w, U = np.linalg.eigh(0.5 * (Pm + Pm.conj().transpose(0, 2, 1)))
        w = np.maximum(w, 0.0)
        M = np.stack([ker.grid(w) for ker in self.kernels], axis=1)       # (B, J, n, n)
        T = np.einsum("bmk,ajmn,bnl->bajkl", U.conj(), self.grads, U, optimize=True)
        K = np.einsum("bjkl,bajkl,bcjkl->bac", M, T.conj(), T, optimize=True).real / n
        K = 0.5 * (K + K.transpose(0, 2, 1))
        r = np.real(np.einsum("amn,bnm->ba", self.basis, g)) / n
        try:
            x = np.linalg.solve(K, r[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise StructuralError("reduced interval system is singular; jump set may be non-ergodic") from exc
        acts = np.einsum("ba,ba->b", x, r)
        if self.mode == "entropic" and self.eps > 0.0:
            logw = np.log(np.maximum(w, 1e-12))
            logPm = np.einsum("bkm,bm,blm->bkl", U, logw, U.conj())
            G = logPm - self.log_sigma
            vs = self.problem.jump_set.vs
            dG = np.einsum("jxy,byz->bjxz", vs, G) - np.einsum("bxy,jyz->bjxz", G, vs)
            TG = np.einsum("bmk,bjmn,bnl->bjkl", U.conj(), dG, U)
            fisher = np.sum(M * np.abs(TG) ** 2, axis=(1, 2, 3)).real / n
            acts = acts + self.eps**2 * fisher
        if return_aux:
            return acts, {"potential_coords": -x, "midpoints": Pm, "rhs": g}
        return acts

    def action(self, nodes: np.ndarray) -> float:
        return float(self.dt * np.sum(self.interval_actions(nodes[:-1], nodes[1:])))


def _pgd_minimize(objective, project, x0: np.ndarray, fd_step: float,
                  tol: float, max_iter: int):
    """Projected gradient descent with incremental finite-difference gradients.

    objective(x) returns per-interval actions for the interior variables x;
    objective.gradient(x, base_acts, h) returns the central-difference
    gradient, exploiting that a node perturbation only touches its two
    adjacent intervals so every probe lands in one batched evaluation.
    Armijo backtracking on the projected step; stops on small gradient,
    two consecutive relative decreases below tol, or the iteration cap.
    """
    x = project(x0)
    acts = objective(x)
    f = float(np.sum(acts))
    alpha = 1.0
    iterations = 0
    converged = False
    small_streak = 0
    for iterations in range(1, max_iter + 1):
        if f <= 1e-18:
            converged = True
            break
        grad_mat = objective.gradient(x, acts, fd_step)
        gnorm = float(np.linalg.norm(grad_mat))
        if gnorm < tol:
            converged = True
            break
        accepted = False
        stalled = False
        for _ in range(60):
            xc = project(x - alpha * grad_mat)
            acts_c = objective(xc)
            fc = float(np.sum(acts_c))
            step = xc - x
            sn2 = float(np.sum(step * step))
            if sn2 == 0.0:
                converged = True
                stalled = True
                accepted = True
                break
            if fc <= f - 1e-4 * sn2 / alpha:
                accepted = True
                break
            alpha *= 0.5
            if alpha < 1e-14:
                break
        if not accepted or stalled:
            break
        rel_dec = (f - fc) / max(abs(f), 1e-300)
        x, f, acts = xc, fc, acts_c
        alpha = min(alpha * 1.8, 1e6)
        small_streak = small_streak + 1 if rel_dec < tol else 0
        if small_streak >= 2:
            converged = True
            break
    return x, f, iterations, converged


class _PathObjective:
    """Adapts an _IntervalEvaluator to interior-coordinate optimization."""

    def __init__(self, evaluator: _IntervalEvaluator, rho0: np.ndarray, rho1: np.ndarray,
                 floor: float):
        self.ev = evaluator
        self.rho0 = rho0
        self.rho1 = rho1
        self.floor = floor

    def nodes(self, x: np.ndarray) -> np.ndarray:
        interior = self.ev.node_from_coords(x)
        return np.concatenate([self.rho0[None], interior, self.rho1[None]])

    def actions(self, x: np.ndarray) -> np.ndarray:
        nodes = self.nodes(x)
        return self.ev.dt * self.ev.interval_actions(nodes[:-1], nodes[1:])

    def project(self, x: np.ndarray) -> np.ndarray:
        nodes = self.ev.node_from_coords(x)
        return self.ev.coords_from_node(project_density_batch(nodes, floor=self.floor))


class _BoundObjective:
    """Callable bundle passed to the descent loop: values plus FD gradient."""

    def __init__(self, path_obj: _PathObjective):
        self.path_obj = path_obj

    def __call__(self, x):
        return self.path_obj.actions(x)

    def gradient(self, x: np.ndarray, base_acts: np.ndarray, h: float) -> np.ndarray:
        ev = self.path_obj.ev
        nodes = self.path_obj.nodes(x)
        n_interior, d = x.shape
        lefts = []
        rights = []
        for i in range(1, n_interior + 1):
            for a in range(d):
                for s in (+h, -h):
                    probe = nodes[i] + s * ev.basis[a]
                    lefts.append(nodes[i - 1])
                    rights.append(probe)
                    lefts.append(probe)
                    rights.append(nodes[i + 1])
        acts = ev.dt * ev.interval_actions(np.array(lefts), np.array(rights))
        acts = acts.reshape(n_interior, d, 2, 2).sum(axis=-1)
        return (acts[:, :, 0] - acts[:, :, 1]) / (2.0 * h)


def _reconstruct(problem: TransportProblem, nodes: np.ndarray, mode: str) -> dict:
    """Eliminated potentials/velocities and residuals for a full node path."""
    ev = _IntervalEvaluator(problem, mode=mode)
    acts, aux = ev.interval_actions(nodes[:-1], nodes[1:], return_aux=True)
    pot_coords = aux["potential_coords"]
    potentials = np.einsum("ba,amn->bmn", pot_coords, ev.basis)
    velocities = np.stack([
        apply_connection(problem.connection, Pm, grad(problem.jump_set, B))
        for Pm, B in zip(aux["midpoints"], potentials)
    ])
    diffs = (nodes[1:] - nodes[:-1]) / ev.dt
    eps_eff = problem.epsilon if mode == "drift" else 0.0
    residual = 0.0
    for i in range(len(velocities)):
        drift = eps_eff * ev.adjoint_matrix @ aux["midpoints"][i].reshape(-1)
        res = diffs[i] + divergence(problem.jump_set, velocities[i]) - drift.reshape(ev.n, ev.n)
        residual = max(residual, gns_norm(res))
    return {
        "actions": ev.dt * acts,
        "action": float(ev.dt * np.sum(acts)),
        "potentials": potentials,
        "velocities": velocities,
        "residual": float(residual),
    }


def eliminate_velocity(problem: TransportProblem, rho_path: np.ndarray):
    """Per-interval exact velocity elimination along a given density path.

    Returns (potential_path, velocity_path, action): the traceless midpoint
    potentials, the constraint-feasible minimizing velocities
    [rho_mid]_Lambda grad B_i, and the resulting discrete action.
    """
    rho_path = np.asarray(rho_path, dtype=complex)
    if rho_path.shape[0] != problem.grid_n + 1:
        raise ValidationError(f"expected {problem.grid_n + 1} path nodes, got {rho_path.shape[0]}")
    rec = _reconstruct(problem, rho_path, mode="drift")
    return rec["potentials"], rec["velocities"], rec["action"]


def solve_primal(problem: TransportProblem, initial_path: np.ndarray | None = None) -> PrimalSolution:
    """Minimize the reduced action over interior densities.

    Projected gradient descent over the traceless-Hermitian coordinates of
    the interior nodes; the projection returns each node to the spectral
    set {eigenvalues >= positivity_floor, normalized trace 1}.  Returns the
    discrete action as the squared-distance estimate.
    """
    return _solve(problem, mode="drift", initial_path=initial_path)


def _refine_path(path: np.ndarray) -> np.ndarray:
    """Insert midpoints, doubling the number of intervals."""
    out = np.empty((2 * (path.shape[0] - 1) + 1,) + path.shape[1:], dtype=complex)
    out[::2] = path
    out[1::2] = 0.5 * (path[:-1] + path[1:])
    return out


def _continuation_path(problem: TransportProblem, mode: str) -> np.ndarray:
    """Coarse-to-fine initial path: solve at half resolution and prolong.

    The reduced objective's conditioning degrades with the grid (the time
    coupling acts like a discrete Laplacian), so descent from a prolonged
    coarse solution saves most of the fine-grid iterations.
    """
    if problem.grid_n < 8 or problem.grid_n % 2 != 0:
        return init_path(problem)
    coarse = TransportProblem(
        jump_set=problem.jump_set,
        connection=problem.connection,
        rho0=problem.rho0,
        rho1=problem.rho1,
        epsilon=problem.epsilon,
        grid_n=problem.grid_n // 2,
        tol=problem.tol,
        max_iter=problem.max_iter,
        positivity_floor=problem.positivity_floor,
    )
    return _refine_path(_solve(coarse, mode, None).rho_path)


def _solve(problem: TransportProblem, mode: str, initial_path: np.ndarray | None) -> PrimalSolution:
    ev = _IntervalEvaluator(problem, mode=mode)
    path0 = _continuation_path(problem, mode) if initial_path is None else np.asarray(initial_path, dtype=complex)
    if path0.shape[0] != problem.grid_n + 1:
        raise ValidationError("initial path has the wrong number of nodes")
    path_obj = _PathObjective(ev, problem.rho0, problem.rho1, problem.positivity_floor)
    bound = _BoundObjective(path_obj)
    x0 = ev.coords_from_node(path0[1:-1])
    scale = 1.0 + float(np.max(np.abs(x0))) if x0.size else 1.0
    h = FD_REL_STEP * scale
    x, f, iterations, converged = _pgd_minimize(bound, path_obj.project, x0, h,
                                                problem.tol, problem.max_iter)
    nodes = path_obj.nodes(x)
    rec = _reconstruct(problem, nodes, mode=mode)
    return PrimalSolution(
        rho_path=nodes,
        velocity_path=rec["velocities"],
        potential_path=rec["potentials"],
        action=rec["action"],
        continuity_residual=rec["residual"],
        iterations=iterations,
        converged=converged,
        problem=problem,
    )


def solve_primal_becker_li(problem: TransportProblem) -> tuple[float, PrimalSolution]:
    """Entropic reformulation: drift-free constraint, Fisher term, entropy boundary.

    Minimizes sum_i dt (<W, [rho_mid]^{-1} W> + eps^2 I(rho_mid)) over
    drift-free paths and adds 2 eps (D(rho1 || sigma) - D(rho0 || sigma)).
    Only meaningful for the KMS family, whose weights also define the
    Fisher information.
    """
    if problem.connection.name != "kms":
        raise DomainError("the entropic reformulation is stated for the KMS connection family")
    solution = _solve(problem, mode="entropic", initial_path=None)
    sigma = problem.jump_set.sigma
    boundary = 2.0 * problem.epsilon * (rel_entropy(problem.rho1, sigma) - rel_entropy(problem.rho0, sigma))
    return solution.action + boundary, solution


# ---------------------------------------------------------------------------
# Classical diagonal oracle
# ---------------------------------------------------------------------------

def _diagonal_jump_data(js: JumpOperatorSet):
    """Extract (position, coefficient) per jump for matrix-unit jump sets."""
    n = js.dim
    jumps = []
    for j in range(js.size):
        V = js.vs[j]
        nz = np.argwhere(np.abs(V) > 1e-12)
        if len(nz) != 1 or nz[0][0] == nz[0][1]:
            raise DomainError("diagonal oracle requires off-diagonal matrix-unit jumps")
        a, b = map(int, nz[0])
        jumps.append((a, b, abs(V[a, b]), js.omegas[j], j))
    return jumps


def diagonal_oracle(problem: TransportProblem, refine: int = 4) -> float:
    """Brute-force classical transport value for simultaneously diagonal data.

    Restricting every path variable to diagonal matrices turns the problem
    into discrete transport on the weighted graph of jump pairs: per
    interval the optimal edge fluxes solve a weighted graph-Laplacian
    system with conductances c^2 n m(r_a, r_b).  The oracle discretizes
    with refine * grid_n intervals and descends over interior diagonal
    densities with finite-difference gradients; it shares no code with the
    matrix-valued solver beyond the scalar kernels.
    """
    js = problem.jump_set
    n = js.dim
    for name, M in (("sigma", js.sigma), ("rho0", problem.rho0), ("rho1", problem.rho1)):
        if np.max(np.abs(M - np.diag(np.diag(M)))) > 1e-12:
            raise DomainError(f"diagonal oracle requires diagonal {name}")
    jumps = _diagonal_jump_data(js)
    kernels = problem.connection.kernels

    pair_index: dict[tuple[int, int], list] = {}
    for a, b, c, om, j in jumps:
        pair_index.setdefault((min(a, b), max(a, b)), []).append((a, b, c, om, j))
    pairs = []
    for key, members in sorted(pair_index.items()):
        coeffs = {m[2] for m in members}
        if len(members) != 2:
            raise DomainError("diagonal oracle requires both jump directions per pair")
        if max(coeffs) - min(coeffs) > 1e-10:
            raise DomainError("diagonal oracle requires equal coefficients per pair")
        a, b, c, om, j = members[0]
        pairs.append((key[0], key[1], c, j))

    # classical generator on observables, (L a)_m = sum_p Lc[m, p] a_p
    Lc = np.zeros((n, n))
    for a, b, c, om, _ in jumps:
        for p, sgn in ((a, 1.0), (b, -1.0)):
            Lc[b, p] += c * c * sgn * np.exp(-om / 2.0)
            Lc[a, p] -= c * c * sgn * np.exp(om / 2.0)
    Ladj = Lc.T

    No = refine * problem.grid_n
    dt = 1.0 / No
    r0 = np.real(np.diag(problem.rho0))
    r1 = np.real(np.diag(problem.rho1))
    t = np.linspace(0.0, 1.0, No + 1)
    nodes0 = (1.0 - t)[:, None] * r0 + t[:, None] * r1
    eps = problem.epsilon
    ones = np.ones((n, n)) / n

    def interval_costs(left: np.ndarray, right: np.ndarray) -> np.ndarray:
        rm = 0.5 * (left + right)
        b = eps * rm @ Ladj.T - (right - left) / dt
        B = rm.shape[0]
        lap = np.zeros((B, n, n))
        for a, bb, c, j in pairs:
            m_ab = kernels[j].ext(rm[:, a], rm[:, bb])
            u = c * c * n * m_ab
            lap[:, a, a] += u
            lap[:, bb, bb] += u
            lap[:, a, bb] -= u
            lap[:, bb, a] -= u
        psi = np.linalg.solve(lap + ones, b[:, :, None])[:, :, 0]
        return 0.5 * np.einsum("bm,bm->b", b, psi)

    class _Obj:
        def __call__(self, x):
            nodes = np.concatenate([r0[None], x, r1[None]])
            return dt * interval_costs(nodes[:-1], nodes[1:])

        def gradient(self, x, base_acts, h):
            nodes = np.concatenate([r0[None], x, r1[None]])
            n_int = x.shape[0]
            lefts, rights = [], []
            for i in range(1, n_int + 1):
                for a in range(n):
                    for s in (+h, -h):
                        probe = nodes[i].copy()
                        probe[a] += s
                        lefts.append(nodes[i - 1])
                        rights.append(probe)
                        lefts.append(probe)
                        rights.append(nodes[i + 1])
            acts = dt * interval_costs(np.array(lefts), np.array(rights))
            acts = acts.reshape(n_int, n, 2, 2).sum(axis=-1)
            return (acts[:, :, 0] - acts[:, :, 1]) / (2.0 * h)

    def project(x):
        return simplex_project_batch(x, total=float(n), floor=problem.positivity_floor)

    obj = _Obj()
    x0 = nodes0[1:-1]
    h = FD_REL_STEP * (1.0 + float(np.max(np.abs(x0))))
    x, f, _, _ = _pgd_minimize(obj, project, x0, h, problem.tol, 4 * problem.max_iter)
    return f
