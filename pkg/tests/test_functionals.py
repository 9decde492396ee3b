import numpy as np
import pytest

from qot import (
    DomainError,
    build_generator,
    dephasing_free_chain,
    depolarizing,
    fisher_info,
    functional_report,
    grad,
    herm_log,
    rel_entropy,
    semigroup,
    two_point,
)
from qot.connections import apply_connection_quadrature, kms_family
from qot.gns_linalg import ntrace

from conftest import rand_density


class TestRelEntropy:
    def test_zero_at_equal(self, rng):
        rho = rand_density(rng, 3, floor=0.1)
        assert rel_entropy(rho, rho) == pytest.approx(0.0, abs=1e-12)

    def test_two_point_closed_form(self):
        """Diagonal case reduces to classical Kullback-Leibler divergence."""
        p, a = 0.3, 0.45
        rho = np.diag([2 * a, 2 * (1 - a)]).astype(complex)
        sigma = np.diag([2 * p, 2 * (1 - p)]).astype(complex)
        classical = a * np.log(a / p) + (1 - a) * np.log((1 - a) / (1 - p))
        assert rel_entropy(rho, sigma) == pytest.approx(classical, rel=1e-12)

    def test_nonnegative_random(self, rng):
        for _ in range(100):
            rho = rand_density(rng, 2, floor=0.02)
            sigma = rand_density(rng, 2, floor=0.02)
            assert rel_entropy(rho, sigma) >= -1e-12

    def test_singular_rejected(self):
        with pytest.raises(DomainError):
            rel_entropy(np.diag([2.0, 0.0]).astype(complex), np.eye(2, dtype=complex))

    def test_decay_along_dual_flow(self, rng):
        """Data-processing: relative entropy decreases along the adjoint semigroup."""
        for make in (lambda: two_point(0.3), lambda: depolarizing(2)):
            js = make()
            gen = build_generator(js)
            rho = rand_density(rng, 2, floor=0.1)
            values = []
            for t in (0.0, 0.5, 1.0):
                Pt = semigroup(gen, t)
                evolved = Pt.adjoint().apply(rho)
                values.append(rel_entropy(evolved, js.sigma))
            assert values[0] >= values[1] - 1e-8
            assert values[1] >= values[2] - 1e-8


class TestFisherInfo:
    def test_zero_at_sigma(self):
        js = two_point(0.3)
        assert fisher_info(js, js.sigma) == pytest.approx(0.0, abs=1e-12)

    def test_positive_off_stationarity(self):
        js = two_point(0.3)
        rho = np.diag([2 * 0.45, 2 * 0.55]).astype(complex)
        assert fisher_info(js, rho) > 1e-3

    def test_two_evaluation_routes_agree(self, rng):
        """Spectral kernel weights against direct quadrature of the mean integral."""
        js = two_point(0.3)
        fam = kms_family(js)
        for _ in range(5):
            rho = rand_density(rng, 2, floor=0.1)
            G = herm_log(rho) - herm_log(js.sigma)
            dG = grad(js, G)
            direct = fisher_info(js, rho)
            weighted = apply_connection_quadrature(fam, rho, dG)
            via_quad = sum(ntrace(dG[j].conj().T @ weighted[j]) for j in range(js.size)).real
            assert direct == pytest.approx(via_quad, abs=1e-8)

    def test_nonnegative(self, rng):
        js = dephasing_free_chain(3, [0.5, 0.3, 0.2])
        for _ in range(10):
            assert fisher_info(js, rand_density(rng, 3, floor=0.05)) >= -1e-12

    def test_vanishes_only_at_sigma_on_diagonal_grid(self):
        js = two_point(0.3)
        for a in np.linspace(0.1, 0.9, 9):
            rho = np.diag([2 * a, 2 * (1 - a)]).astype(complex)
            val = fisher_info(js, rho)
            if abs(a - 0.3) < 1e-9:
                assert val < 1e-12
            else:
                assert val > 1e-8


def test_gradient_flow_identity(rng):
    """The adjoint generator is the weighted divergence of the entropy gradient.

    For KMS weights bound to the Bohr frequencies,
    L'rho = div([rho] grad(log rho - log sigma)); this ties the generator,
    calculus, connection, and entropy modules together.
    """
    from qot import divergence
    from qot.connections import apply_connection

    js = two_point(0.3)
    fam = kms_family(js)
    gen = build_generator(js)
    for _ in range(5):
        rho = rand_density(rng, 2, floor=0.1)
        G = herm_log(rho) - herm_log(js.sigma)
        lhs = divergence(js, apply_connection(fam, rho, grad(js, G)))
        rhs = gen.apply_adjoint(rho)
        assert np.linalg.norm(lhs - rhs) < 1e-10


def test_functional_report(rng):
    js = two_point(0.3)
    path = np.stack([rand_density(rng, 2, floor=0.1) for _ in range(4)])
    rep = functional_report(js, path)
    assert rep.entropy_start == pytest.approx(rel_entropy(path[0], js.sigma))
    assert rep.entropy_end == pytest.approx(rel_entropy(path[-1], js.sigma))
    assert len(rep.fisher_values) == 4
    assert all(np.isfinite(v) for v in rep.fisher_values)
