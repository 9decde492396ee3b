import numpy as np
import pytest

from qot import TransportProblem, two_point
from qot.connections import kms_family
from qot.projections import project_density


def rand_matrix(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def rand_hermitian(rng, n, scale=1.0):
    M = rand_matrix(rng, n)
    return scale * 0.5 * (M + M.conj().T)


def rand_density(rng, n, floor=0.1):
    return project_density(rand_hermitian(rng, n) + n * np.eye(n), floor=floor)


def rand_positive(rng, n, shift=0.3):
    M = rand_matrix(rng, n)
    return M @ M.conj().T + shift * np.eye(n)


def rand_field(rng, J, n):
    return rng.standard_normal((J, n, n)) + 1j * rng.standard_normal((J, n, n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def bench_js():
    return two_point(0.3)


@pytest.fixture
def bench_endpoints():
    # diagonal endpoints a: 0.2 -> 0.5 in normalized-trace convention
    return (np.diag([0.4, 1.6]).astype(complex), np.diag([1.0, 1.0]).astype(complex))


def make_bench_problem(epsilon=0.0, grid_n=8, connection=None, **kw):
    js = two_point(0.3)
    conn = kms_family(js) if connection is None else connection
    r0 = np.diag([0.4, 1.6]).astype(complex)
    r1 = np.diag([1.0, 1.0]).astype(complex)
    return TransportProblem(js, conn, r0, r1, epsilon=epsilon, grid_n=grid_n, **kw)
