"""
Tests for exact and mollified Coulomb kernels and the pairwise drift.
"""

import numpy as np
import pytest
from scipy import integrate

from app.services import kernel
from app.services.kernel import (
    FOUR_PI,
    KernelSpec,
    coulomb_drift,
    coulomb_force,
    coulomb_potential,
    force_bound_constant,
    mollified_force,
    mollified_potential,
    mollifier_density,
    pairwise_forces,
    radial_mass,
    radial_mass_derivative,
)
from app.utils.exceptions import SingularityError, ValidationError


def _shell_mass(r: float, eps: float) -> float:
    """Mollifier mass inside radius r by adaptive quadrature."""
    spec = KernelSpec(eps)
    value, _ = integrate.quad(
        lambda s: FOUR_PI * s * s * float(mollifier_density(np.array([s, 0.0, 0.0]), spec)), 0.0, min(r, eps),
        epsabs=1e-14, epsrel=1e-12,
    )
    return value


class TestKernelSpec:
    def test_rejects_non_positive_epsilon(self):
        with pytest.raises(ValidationError):
            KernelSpec(0.0)
        with pytest.raises(ValidationError):
            KernelSpec(-1.0)

    def test_rejects_unknown_profile_and_dimension(self):
        with pytest.raises(ValidationError):
            KernelSpec(0.1, profile="gaussian")
        with pytest.raises(ValidationError):
            KernelSpec(0.1, d=2)


class TestRadialMassProfile:
    def test_endpoints(self):
        assert radial_mass(0.0) == 0.0
        assert radial_mass(1.0) == 1.0
        assert radial_mass(3.0) == 1.0

    def test_non_decreasing(self):
        values = radial_mass(np.linspace(0.0, 1.2, 1001))
        assert np.all(np.diff(values) >= 0.0)

    def test_derivative_matches_finite_difference(self):
        s = np.linspace(0.05, 0.95, 19)
        h = 1e-6
        fd = (radial_mass(s + h) - radial_mass(s - h)) / (2 * h)
        np.testing.assert_allclose(fd, radial_mass_derivative(s), rtol=1e-7)

    def test_mollifier_integrates_to_one(self):
        assert _shell_mass(1.0, 1.0) == pytest.approx(1.0, abs=1e-12)


class TestCoulomb:
    def test_potential_closed_form(self):
        assert coulomb_potential([1.0, 0.0, 0.0]) == pytest.approx(1.0 / (4.0 * np.pi))
        assert coulomb_potential([1.0, 0.0, 0.0]) == pytest.approx(0.0795775, rel=1e-6)

    def test_potential_homogeneity(self):
        assert coulomb_potential([0.0, 0.0, 2.0]) == pytest.approx(coulomb_potential([0.0, 0.0, 1.0]) / 2.0)

    def test_singular_at_origin(self):
        with pytest.raises(SingularityError):
            coulomb_potential([0.0, 0.0, 0.0])
        with pytest.raises(SingularityError):
            coulomb_force([0.0, 0.0, 0.0])

    def test_force_closed_form(self):
        np.testing.assert_allclose(coulomb_force([0.0, 0.0, 2.0]), [0.0, 0.0, 1.0 / (16.0 * np.pi)])
        assert coulomb_force([0.0, 0.0, 2.0])[2] == pytest.approx(0.0198944, rel=1e-5)

    def test_force_is_odd(self, rng):
        x = rng.standard_normal((50, 3))
        np.testing.assert_array_equal(coulomb_force(-x), -coulomb_force(x))

    def test_force_is_minus_gradient(self):
        x = np.array([1.0, 1.0, 0.0])
        h = 1e-5
        grad = np.array([
            (coulomb_potential(x + h * e) - coulomb_potential(x - h * e)) / (2 * h) for e in np.eye(3)
        ])
        np.testing.assert_allclose(-grad, coulomb_force(x), rtol=1e-6)


class TestMollifiedForce:
    def test_zero_at_origin(self):
        np.testing.assert_array_equal(mollified_force(np.zeros(3), KernelSpec(0.3)), np.zeros(3))

    def test_equals_exact_force_outside_core(self, rng):
        spec = KernelSpec(0.2)
        directions = rng.standard_normal((100, 3))
        directions /= np.linalg.norm(directions, axis=1)[:, None]
        x = 1.5 * spec.epsilon * directions
        np.testing.assert_array_equal(mollified_force(x, spec), coulomb_force(x))

    def test_inside_core_matches_quadrature(self):
        eps = 0.4
        x = np.array([0.0, 0.5 * eps, 0.0])
        r = 0.5 * eps
        expected = _shell_mass(r, eps) * x / (FOUR_PI * r**3)
        np.testing.assert_allclose(mollified_force(x, KernelSpec(eps)), expected, rtol=1e-4)

    def test_bound(self, rng):
        c = force_bound_constant()
        eps = rng.uniform(1e-3, 1.0, 10_000)
        x = rng.standard_normal((10_000, 3)) * (2.0 * eps)[:, None]
        for xi, e in zip(x, eps):
            spec = KernelSpec(float(e))
            r = np.linalg.norm(xi)
            bound = min(c * r / e**3, 1.0 / (FOUR_PI * r * r))
            assert np.linalg.norm(mollified_force(xi, spec)) <= bound * (1.0 + 1e-12)

    def test_divergence_identity(self):
        eps = 0.5
        spec = KernelSpec(eps)
        h = 1e-4 * eps
        grid = np.linspace(-0.6 * eps, 0.6 * eps, 5)
        for x in np.array(np.meshgrid(grid, grid, grid)).reshape(3, -1).T:
            if np.linalg.norm(x) >= 0.9 * eps:
                continue
            div = sum(
                (mollified_force(x + h * e, spec)[a] - mollified_force(x - h * e, spec)[a]) / (2 * h)
                for a, e in enumerate(np.eye(3))
            )
            assert div == pytest.approx(float(mollifier_density(x, spec)), rel=1e-3)

    def test_converges_to_exact_force(self):
        x = np.array([0.1, 0.0, 0.0])
        exact = coulomb_force(x)
        errors = [np.linalg.norm(mollified_force(x, KernelSpec(0.4 / 2**k)) - exact) for k in range(6)]
        assert all(b <= a for a, b in zip(errors, errors[1:]))
        assert errors[-1] == 0.0


class TestMollifiedPotential:
    def test_equals_exact_outside_core(self):
        spec = KernelSpec(0.25)
        x = np.array([0.0, 0.0, 0.5])
        assert mollified_potential(x, spec) == coulomb_potential(x)

    def test_finite_at_origin_matches_quadrature(self):
        eps = 0.3
        spec = KernelSpec(eps)
        value, _ = integrate.quad(
            lambda s: s * float(mollifier_density(np.array([s, 0.0, 0.0]), spec)), 0.0, eps,
            epsabs=1e-14, epsrel=1e-12,
        )
        assert float(mollified_potential(np.zeros(3), spec)) == pytest.approx(value, rel=1e-4)

    def test_laplacian_is_minus_mollifier(self):
        eps = 0.5
        spec = KernelSpec(eps)
        h = 1e-3 * eps
        for x in (np.array([0.3 * eps, 0.0, 0.0]), np.array([0.1, 0.2, -0.1]) * eps):
            center = float(mollified_potential(x, spec))
            lap = sum(
                float(mollified_potential(x + h * e, spec)) - 2 * center + float(mollified_potential(x - h * e, spec))
                for e in np.eye(3)
            ) / (h * h)
            assert -lap == pytest.approx(float(mollifier_density(x, spec)), rel=1e-3)


class TestPairwiseForces:
    def test_single_particle_has_zero_drift(self):
        np.testing.assert_array_equal(pairwise_forces([[1.0, 2.0, 3.0]], KernelSpec(0.1)), np.zeros((1, 3)))

    def test_two_particles_closed_form(self):
        drift = pairwise_forces([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], KernelSpec(0.1))
        np.testing.assert_allclose(drift[0], [-1.0 / (8.0 * np.pi), 0.0, 0.0], rtol=1e-14)
        np.testing.assert_allclose(drift[1], [1.0 / (8.0 * np.pi), 0.0, 0.0], rtol=1e-14)

    def test_total_drift_vanishes(self, rng):
        spec = KernelSpec(0.1)
        pos = rng.standard_normal((200, 3))
        drift = pairwise_forces(pos, spec)
        scale = 200 * np.max(np.linalg.norm(drift, axis=1))
        assert np.max(np.abs(drift.sum(axis=0))) <= 1e-12 * scale

    def test_rejects_non_finite_positions(self):
        with pytest.raises(ValidationError):
            pairwise_forces([[0.0, np.nan, 0.0], [1.0, 0.0, 0.0]], KernelSpec(0.1))

    def test_rejects_unknown_method(self, cloud):
        with pytest.raises(ValidationError):
            pairwise_forces(cloud, KernelSpec(0.1), method="fmm")

    def test_tree_matches_direct(self, cloud):
        from app.services.treecode import tree_deviation

        spec = KernelSpec(0.1)
        direct = pairwise_forces(cloud, spec)
        tree = pairwise_forces(cloud, spec, method="tree")
        assert tree_deviation(tree, direct) <= 1e-3

    def test_exact_drift_matches_mollified_when_separated(self):
        pos = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        np.testing.assert_allclose(coulomb_drift(pos), pairwise_forces(pos, KernelSpec(0.5)), rtol=1e-14)

    def test_exact_drift_rejects_coincident_pair(self):
        with pytest.raises(SingularityError):
            coulomb_drift([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

    def test_block_size_does_not_change_rows(self, rng, monkeypatch):
        spec = KernelSpec(0.2)
        pos = rng.standard_normal((100, 3))
        reference = pairwise_forces(pos, spec)
        monkeypatch.setattr(kernel.AppConfig.KERNEL, "BLOCK_ROWS", 7)
        np.testing.assert_allclose(pairwise_forces(pos, spec), reference, rtol=1e-13, atol=1e-15)
