"""Batch front end: problem files in, structured reports and CSV paths out.

Problem files are JSON; complex matrices serialize as nested arrays of
[re, im] pairs in row-major order.  Exit codes: 0 success, 1 validation or
domain failure, 2 parse failure, 3 solver non-convergence.  Reports embed
the fully resolved configuration so a run is reproducible from its output;
identical problem file and seed give a bit-identical report except for the
timings block.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .connections import connection_axioms, connection_family
from .dual import certify_feasibility, check_weak_duality, solve_dual
from .exceptions import (
    ConvergenceError,
    DomainError,
    ProblemFormatError,
    QotError,
    ValidationError,
)
from .functionals import fisher_info, rel_entropy
from .lindblad import (
    JumpOperatorSet,
    build_generator,
    check_cp,
    check_dbc,
    check_ergodic,
    preset,
    validate_jump_set,
)
from .primal import TransportProblem, solve_primal, solve_primal_becker_li

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_PARSE = 2
EXIT_NO_CONVERGENCE = 3

DEFAULTS = {
    "epsilon": 0.0,
    "grid_n": 16,
    "tol": 1e-8,
    "max_iter": 500,
    "positivity_floor": 1e-6,
    "seed": 0,
    "connection": "kms",
    "trace_convention": "normalized",
}


def decode_matrix(obj, name: str = "matrix") -> np.ndarray:
    """Nested [re, im] pair rows to a complex matrix."""
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFormatError(f"{name} is not a nested array of [re, im] pairs") from exc
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise ProblemFormatError(f"{name} must be square with [re, im] entries, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_matrix(M: np.ndarray) -> list:
    M = np.asarray(M, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def _build_jump_set(spec: dict) -> JumpOperatorSet:
    if "preset" in spec:
        p = spec["preset"]
        if not isinstance(p, dict) or "name" not in p:
            raise ProblemFormatError("preset must be an object with a 'name'")
        try:
            return preset(p["name"], **p.get("params", {}))
        except TypeError as exc:
            raise ProblemFormatError(f"bad preset parameters: {exc}") from exc
    if "jump_set" in spec:
        raw = spec["jump_set"]
        try:
            sigma = decode_matrix(raw["sigma"], "sigma")
            vs = np.stack([decode_matrix(j["V"], "jump operator") for j in raw["jumps"]])
            omegas = np.array([float(j["omega"]) for j in raw["jumps"]])
            involution = np.array([int(i) for i in raw["involution"]])
        except (KeyError, TypeError) as exc:
            raise ProblemFormatError(f"malformed explicit jump set: {exc}") from exc
        return JumpOperatorSet(sigma=sigma, vs=vs, omegas=omegas, involution=involution)
    raise ProblemFormatError("problem must define either 'preset' or 'jump_set'")


def load_problem(path: str, overrides: dict):
    """Parse a problem file, apply CLI overrides, return problem + resolved config."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise ProblemFormatError(f"cannot read problem file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"problem file is not valid JSON: {exc}") from exc
    if not isinstance(spec, dict):
        raise ProblemFormatError("problem file must contain a JSON object")

    notices: list[str] = []
    cfg = dict(DEFAULTS)
    for key in DEFAULTS:
        if key in spec:
            cfg[key] = spec[key]
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value

    js = _build_jump_set(spec)
    n = js.dim
    if "algebra_dim" in spec and int(spec["algebra_dim"]) != n:
        raise ProblemFormatError(
            f"algebra_dim {spec['algebra_dim']} does not match jump set dimension {n}")

    try:
        rho0 = decode_matrix(spec["rho0"], "rho0")
        rho1 = decode_matrix(spec["rho1"], "rho1")
    except KeyError as exc:
        raise ProblemFormatError(f"missing endpoint: {exc}") from exc
    if cfg["trace_convention"] == "unit":
        rho0 = n * rho0
        rho1 = n * rho1
        notices.append(f"unit-trace endpoints rescaled by n = {n} to the normalized-trace convention")
    elif cfg["trace_convention"] != "normalized":
        raise ProblemFormatError(f"unknown trace convention {cfg['trace_convention']!r}")

    conn = connection_family(str(cfg["connection"]), js)
    problem = TransportProblem(
        jump_set=js,
        connection=conn,
        rho0=rho0,
        rho1=rho1,
        epsilon=float(cfg["epsilon"]),
        grid_n=int(cfg["grid_n"]),
        tol=float(cfg["tol"]),
        max_iter=int(cfg["max_iter"]),
        positivity_floor=float(cfg["positivity_floor"]),
    )
    resolved = {
        "connection": conn.name,
        "epsilon": problem.epsilon,
        "grid_n": problem.grid_n,
        "tol": problem.tol,
        "max_iter": problem.max_iter,
        "positivity_floor": problem.positivity_floor,
        "seed": int(cfg["seed"]),
        "trace_convention": "normalized",
        "algebra_dim": n,
        "sigma": encode_matrix(js.sigma),
        "jumps": [
            {"V": encode_matrix(V), "omega": float(om)}
            for V, om in zip(js.vs, js.omegas)
        ],
        "involution": [int(i) for i in js.involution],
        "rho0": encode_matrix(rho0),
        "rho1": encode_matrix(rho1),
    }
    if "preset" in spec:
        resolved["preset"] = spec["preset"]
    return problem, resolved, notices, int(cfg["seed"])


def _write_report(report: dict, out_dir: Path, name: str) -> str:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(report, sort_keys=True, indent=2)
    path = out_dir / name
    path.write_text(text + "\n", encoding="utf-8")
    print(text)
    return str(path)


def _write_rho_csv(path: Path, rho_path: np.ndarray, interval_actions, dt: float):
    """One row per gridpoint: t, row-major re/im entries, action density.

    The action density of interval i is attached to its left node; the final
    node repeats the last interval.
    """
    n = rho_path.shape[-1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["t"]
        for k in range(n):
            for l in range(n):
                header += [f"re_{k}{l}", f"im_{k}{l}"]
        header.append("action_density")
        writer.writerow(header)
        N = len(rho_path) - 1
        for i, rho in enumerate(rho_path):
            row = [f"{i * dt:.12g}"]
            for k in range(n):
                for l in range(n):
                    row += [f"{rho[k, l].real:.17g}", f"{rho[k, l].imag:.17g}"]
            density = interval_actions[min(i, N - 1)] / dt
            row.append(f"{density:.17g}")
            writer.writerow(row)


def _write_matrix_path_csv(path: Path, mats: np.ndarray, times: np.ndarray):
    n = mats.shape[-1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["t"]
        for k in range(n):
            for l in range(n):
                header += [f"re_{k}{l}", f"im_{k}{l}"]
        writer.writerow(header)
        for t, M in zip(times, mats):
            row = [f"{t:.12g}"]
            for k in range(n):
                for l in range(n):
                    row += [f"{M[k, l].real:.17g}", f"{M[k, l].imag:.17g}"]
            writer.writerow(row)


def _primal_block(solution) -> dict:
    w2 = solution.action
    return {
        "w2": w2,
        "w": float(np.sqrt(max(w2, 0.0))),
        "converged": solution.converged,
        "iterations": solution.iterations,
        "continuity_residual": solution.continuity_residual,
    }


def _dual_block(solution) -> dict:
    return {
        "objective": solution.objective,
        "worst_violation": solution.worst_violation,
        "feasible": solution.feasible,
        "iterations": solution.iterations,
    }


def _functional_block(problem, rho_path) -> dict:
    sigma = problem.jump_set.sigma
    return {
        "entropy_start": rel_entropy(problem.rho0, sigma),
        "entropy_end": rel_entropy(problem.rho1, sigma),
        "fisher_values": [fisher_info(problem.jump_set, rho) for rho in rho_path],
    }


def _gap_block(primal_action: float, dual_objective: float) -> dict:
    half = 0.5 * primal_action
    return {
        "absolute": half - dual_objective,
        "relative": (half - dual_objective) / max(half, 1e-12),
    }


def cmd_verify(problem: TransportProblem, resolved: dict, notices, seed: int, out_dir: Path) -> int:
    t0 = time.perf_counter()
    js = problem.jump_set
    report_js = validate_jump_set(js)
    gen = build_generator(js, validate=False)
    ergodic, kdim = check_ergodic(gen)
    checks = {
        "jump_set_residuals": report_js.residuals,
        "jump_set_passed": report_js.passed,
        "dbc_residual": check_dbc(js, samples=20, gen=gen, seed=seed),
        "ergodic": ergodic,
        "kernel_dimension": kdim,
        "choi_min_eigenvalue": {str(t): check_cp(gen, t) for t in (0.1, 1.0)},
    }
    axiom_reports = {}
    seen = set()
    for ker in problem.connection.kernels:
        if ker.name in seen:
            continue
        seen.add(ker.name)
        rep = connection_axioms(ker, trials=40, dim=min(3, js.dim + 1), seed=seed)
        axiom_reports[ker.name] = {
            "monotonicity": rep.monotonicity,
            "transformer": rep.transformer,
            "continuity_monotone": rep.continuity_monotone,
            "continuity_gap": rep.continuity_gap,
            "passed": rep.passed(),
        }
    checks["connection_axioms"] = axiom_reports
    passed = (
        report_js.passed
        and checks["dbc_residual"] <= 1e-9
        and ergodic
        and all(v >= -1e-9 for v in checks["choi_min_eigenvalue"].values())
        and all(rep["passed"] for rep in axiom_reports.values())
    )
    report = {
        "command": "verify",
        "config": resolved,
        "notices": notices,
        "checks": checks,
        "passed": passed,
        "timings": {"total_s": time.perf_counter() - t0},
    }
    _write_report(report, out_dir, "verify.json")
    return EXIT_OK if passed else EXIT_DOMAIN


def cmd_primal(problem, resolved, notices, seed, out_dir: Path) -> int:
    t0 = time.perf_counter()
    sol = solve_primal(problem)
    dt = 1.0 / problem.grid_n
    from .primal import _IntervalEvaluator

    ev = _IntervalEvaluator(problem)
    acts = dt * ev.interval_actions(sol.rho_path[:-1], sol.rho_path[1:])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rho_csv(out_dir / "rho_path.csv", sol.rho_path, acts, dt)
    mids = (np.arange(problem.grid_n) + 0.5) * dt
    _write_matrix_path_csv(out_dir / "potential_path.csv", sol.potential_path, mids)
    report = {
        "command": "primal",
        "config": resolved,
        "notices": notices,
        "primal": _primal_block(sol),
        "functionals": _functional_block(problem, sol.rho_path),
        "csv": {"rho_path": "rho_path.csv", "potential_path": "potential_path.csv"},
        "timings": {"total_s": time.perf_counter() - t0},
    }
    _write_report(report, out_dir, "primal.json")
    return EXIT_OK if sol.converged else EXIT_NO_CONVERGENCE


def cmd_dual(problem, resolved, notices, seed, out_dir: Path) -> int:
    t0 = time.perf_counter()
    sol = solve_dual(problem, seed=seed)
    times = np.linspace(0.0, 1.0, problem.grid_n + 1)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_matrix_path_csv(out_dir / "node_potentials.csv", sol.node_potentials, times)
    mids = (np.arange(problem.grid_n) + 0.5) / problem.grid_n
    _write_matrix_path_csv(out_dir / "witness_densities.csv", sol.witness_densities, mids)
    report = {
        "command": "dual",
        "config": resolved,
        "notices": notices,
        "dual": _dual_block(sol),
        "csv": {"node_potentials": "node_potentials.csv", "witness_densities": "witness_densities.csv"},
        "timings": {"total_s": time.perf_counter() - t0},
    }
    _write_report(report, out_dir, "dual.json")
    return EXIT_OK if sol.feasible else EXIT_NO_CONVERGENCE


def cmd_gap(problem, resolved, notices, seed, out_dir: Path) -> int:
    t0 = time.perf_counter()
    t_primal = time.perf_counter()
    primal = solve_primal(problem)
    t_primal = time.perf_counter() - t_primal
    t_dual = time.perf_counter()
    dual = solve_dual(problem, warm_start=primal, seed=seed)
    t_dual = time.perf_counter() - t_dual
    margin = check_weak_duality(primal, dual)
    dt = 1.0 / problem.grid_n
    from .primal import _IntervalEvaluator

    ev = _IntervalEvaluator(problem)
    acts = dt * ev.interval_actions(primal.rho_path[:-1], primal.rho_path[1:])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rho_csv(out_dir / "rho_path.csv", primal.rho_path, acts, dt)
    times = np.linspace(0.0, 1.0, problem.grid_n + 1)
    _write_matrix_path_csv(out_dir / "node_potentials.csv", dual.node_potentials, times)
    report = {
        "command": "gap",
        "config": resolved,
        "notices": notices,
        "primal": _primal_block(primal),
        "dual": _dual_block(dual),
        "gap": _gap_block(primal.action, dual.objective),
        "weak_duality_margin": margin,
        "functionals": _functional_block(problem, primal.rho_path),
        "csv": {"rho_path": "rho_path.csv", "node_potentials": "node_potentials.csv"},
        "timings": {"total_s": time.perf_counter() - t0, "primal_s": t_primal, "dual_s": t_dual},
    }
    _write_report(report, out_dir, "gap.json")
    if not (primal.converged and dual.feasible):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_becker_li(problem, resolved, notices, seed, out_dir: Path) -> int:
    t0 = time.perf_counter()
    if problem.connection.name != "kms":
        raise DomainError("the entropic-reformulation comparison requires the kms connection")
    primal = solve_primal(problem)
    value_bl, sol_bl = solve_primal_becker_li(problem)
    diff = abs(primal.action - value_bl)
    rel = diff / max(abs(primal.action), 1e-12)
    report = {
        "command": "becker_li",
        "config": resolved,
        "notices": notices,
        "standard_w2": primal.action,
        "reformulated_w2": value_bl,
        "absolute_difference": diff,
        "relative_difference": rel,
        "primal": _primal_block(primal),
        "timings": {"total_s": time.perf_counter() - t0},
    }
    _write_report(report, out_dir, "becker_li.json")
    if not (primal.converged and sol_bl.converged):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


_COMMANDS = {
    "verify": cmd_verify,
    "primal": cmd_primal,
    "dual": cmd_dual,
    "gap": cmd_gap,
    "becker-li": cmd_becker_li,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qot",
        description="Noncommutative transport distances: solve, dualize, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} command on a problem file")
        p.add_argument("problem_file", help="JSON problem description")
        p.add_argument("--out", default=None, help="output directory (default: alongside the problem file)")
        p.add_argument("--grid", type=int, default=None, help="override grid_n")
        p.add_argument("--epsilon", type=float, default=None, help="override epsilon")
        p.add_argument("--connection", choices=["kms", "arithmetic"], default=None)
        p.add_argument("--seed", type=int, default=None, help="override the random seed")
        p.add_argument("--max-iter", type=int, default=None, help="override max_iter")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "grid_n": args.grid,
        "epsilon": args.epsilon,
        "connection": args.connection,
        "seed": args.seed,
        "max_iter": args.max_iter,
    }
    try:
        problem, resolved, notices, seed = load_problem(args.problem_file, overrides)
        out_dir = Path(args.out) if args.out else Path(args.problem_file).resolve().parent
        return _COMMANDS[args.command](problem, resolved, notices, seed, out_dir)
    except ProblemFormatError as exc:
        print(json.dumps({"error": str(exc), "kind": "parse"}), file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, DomainError) as exc:
        print(json.dumps({"error": str(exc), "kind": "validation"}), file=sys.stderr)
        return EXIT_DOMAIN
    except ConvergenceError as exc:
        print(json.dumps({"error": str(exc), "kind": "convergence"}), file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
