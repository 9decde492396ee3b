import numpy as np
import pytest

from qot import DomainError
from qot.projections import (
    project_density,
    project_density_batch,
    simplex_project,
    simplex_project_batch,
)

from conftest import rand_hermitian


def test_simplex_feasible_fixed_point():
    v = np.array([0.2, 0.5, 0.3])
    np.testing.assert_allclose(simplex_project(v, total=1.0), v, atol=1e-14)


def test_simplex_clips_negatives():
    out = simplex_project(np.array([1.4, -0.4]), total=1.0)
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-14)
    assert out.sum() == pytest.approx(1.0)


def test_simplex_floor():
    out = simplex_project(np.array([[2.5, -1.0, 0.5]]), total=2.0, floor=0.1)
    assert out.min() >= 0.1 - 1e-15
    assert out.sum() == pytest.approx(2.0)


def test_simplex_batch_matches_loop(rng):
    V = rng.standard_normal((20, 5))
    batch = simplex_project_batch(V, total=5.0, floor=0.01)
    for row_in, row_out in zip(V, batch):
        np.testing.assert_allclose(simplex_project(row_in, total=5.0, floor=0.01), row_out,
                                   atol=1e-12)


def test_simplex_is_euclidean_projection(rng):
    """Projected point must beat random feasible points in distance."""
    v = rng.standard_normal(4)
    p = simplex_project(v, total=4.0)
    for _ in range(50):
        q = rng.dirichlet(np.ones(4)) * 4.0
        assert np.linalg.norm(v - p) <= np.linalg.norm(v - q) + 1e-12


def test_infeasible_floor_rejected():
    with pytest.raises(DomainError):
        simplex_project(np.ones(3), total=1.0, floor=0.5)


def test_density_projection_properties(rng):
    for _ in range(10):
        H = rand_hermitian(rng, 3, scale=2.0)
        rho = project_density(H, floor=1e-6)
        w = np.linalg.eigvalsh(rho)
        assert w.min() >= 1e-6 - 1e-12
        assert np.trace(rho).real == pytest.approx(3.0, abs=1e-10)
        assert np.linalg.norm(rho - rho.conj().T) < 1e-12


def test_density_projection_fixed_point(rng):
    rho = project_density(rand_hermitian(rng, 2) + 2 * np.eye(2))
    again = project_density(rho)
    np.testing.assert_allclose(again, rho, atol=1e-12)


def test_density_batch_matches_single(rng):
    Hs = np.stack([rand_hermitian(rng, 2) for _ in range(6)])
    batch = project_density_batch(Hs, floor=1e-4)
    for H, P in zip(Hs, batch):
        np.testing.assert_allclose(project_density(H, floor=1e-4), P, atol=1e-12)
