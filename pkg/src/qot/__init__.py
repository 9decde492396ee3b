"""Noncommutative transport distances for detailed-balance quantum Markov semigroups.

The package computes the regularized transport distance between invertible
density matrices two ways: as the minimal action of discrete density paths
subject to a continuity equation with drift (primal), and as the supremum
of endpoint pairings over Hamilton-Jacobi-Bellmann subsolutions (dual),
and certifies the duality gap between them.
"""

from .connections import (
    ConnectionFamily,
    MeanKernel,
    apply_connection,
    apply_connection_quadrature,
    arithmetic_family,
    arithmetic_kernel,
    connection_axioms,
    connection_family,
    connection_matrix_mean,
    field_inner,
    field_norm,
    frechet_quadform,
    kms_family,
    kms_kernel,
    monotone_inverse_convergence,
    quad_inverse,
    weighted_norm_sq,
)
from .derivation import (
    J_map,
    divergence,
    grad,
    is_real_field,
    partial_j,
    solve_potential,
    weighted_laplacian,
)
from .dual import (
    DualSolution,
    certify_feasibility,
    check_weak_duality,
    dual_objective,
    feasibilize,
    hjb_violation,
    refine_potentials,
    solve_dual,
    violations_path,
)
from .exceptions import (
    ConvergenceError,
    DomainError,
    ProblemFormatError,
    QotError,
    StructuralError,
    ValidationError,
)
from .functionals import FunctionalReport, fisher_info, functional_report, rel_entropy
from .gns_linalg import (
    SuperOperator,
    eigh,
    gns_inner,
    gns_norm,
    herm_exp,
    herm_log,
    hermitian_basis,
    hermitian_coords,
    hermitian_from_coords,
    hermitian_traceless_basis,
    matfunc,
    ntrace,
    require_density,
    require_hermitian,
    superop_adjoint,
    superop_matrix,
)
from .lindblad import (
    Generator,
    JumpOperatorSet,
    ValidationReport,
    build_generator,
    check_cp,
    check_dbc,
    check_ergodic,
    choi_matrix,
    dephasing_free_chain,
    depolarizing,
    preset,
    semigroup,
    two_point,
    validate_jump_set,
)
from .primal import (
    PrimalSolution,
    TransportProblem,
    diagonal_oracle,
    eliminate_velocity,
    init_path,
    solve_primal,
    solve_primal_becker_li,
)
from .projections import (
    project_density,
    project_density_batch,
    simplex_project,
    simplex_project_batch,
)

__version__ = "0.1.0"
