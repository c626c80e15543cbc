"""
Tests for particle and continuum estimators.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError as SchemaError

from app.schemas.results import DIAGNOSTICS_COLUMNS
from app.services import stats
from app.services.kernel import FOUR_PI, MOLLIFIER_NORM, KernelSpec
from app.services.pde import RadialField
from app.utils.exceptions import SingularityError, ValidationError

GAUSSIAN_NEG_ENTROPY = -1.5 * math.log(2.0 * math.pi * math.e)


def _uniform_ball_field(radius: float, cells: int = 64, outer: float = None) -> RadialField:
    """Uniform ball of unit mass on a grid whose edges hit the ball radius."""
    outer = outer or radius
    edges = np.linspace(0.0, outer, cells + 1)
    rho = np.where(edges[1:] <= radius + 1e-12, 3.0 / (4.0 * math.pi * radius**3), 0.0)
    return RadialField(edges, rho)


class TestEmpiricalEnergy:
    def test_two_particles(self):
        pos = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
        assert stats.empirical_energy(pos) == pytest.approx(1.0 / (16.0 * math.pi), rel=1e-14)
        assert stats.empirical_energy(pos, KernelSpec(0.5)) == pytest.approx(1.0 / (16.0 * math.pi), rel=1e-14)

    def test_single_particle(self):
        assert stats.empirical_energy([[1.0, 1.0, 1.0]]) == 0.0
        assert stats.empirical_energy_se([[1.0, 1.0, 1.0]]) == 0.0

    def test_coincident_pair(self):
        pos = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        with pytest.raises(SingularityError):
            stats.empirical_energy(pos)
        spec = KernelSpec(0.5)
        # g_eps(0) = c / (8 eps)
        expected = 2.0 * (MOLLIFIER_NORM / 8.0 / 0.5) / 8.0
        assert stats.empirical_energy(pos, spec) == pytest.approx(expected, rel=1e-12)

    def test_mollified_never_exceeds_exact(self, cloud):
        assert stats.empirical_energy(cloud, KernelSpec(0.3)) <= stats.empirical_energy(cloud)

    def test_permutation_invariant(self, cloud, rng):
        spec = KernelSpec(0.2)
        shuffled = cloud[rng.permutation(cloud.shape[0])]
        assert stats.empirical_energy(shuffled, spec) == pytest.approx(stats.empirical_energy(cloud, spec), rel=1e-13)

    def test_standard_error_is_positive(self, cloud):
        assert stats.empirical_energy_se(cloud, KernelSpec(0.2)) > 0.0


class TestCollisionRate:
    def test_separated_pair(self):
        assert stats.collision_rate([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], KernelSpec(0.5)) == 0.0

    def test_coincident_pair(self):
        eps = 0.5
        expected = 2.0 * MOLLIFIER_NORM / eps**3 / 4.0
        rate = stats.collision_rate([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], KernelSpec(eps))
        assert rate == pytest.approx(expected, rel=1e-14)


class TestEntropy:
    def test_gaussian(self):
        samples = np.random.default_rng(4).standard_normal((20000, 3))
        assert stats.entropy_knn(samples) == pytest.approx(GAUSSIAN_NEG_ENTROPY, rel=0.02)

    def test_scaling(self, rng):
        """Test that dilating the cloud by 2 lowers int rho log rho by exactly 3 log 2"""
        samples = rng.standard_normal((2000, 3))
        shift = stats.entropy_knn(samples) - stats.entropy_knn(2.0 * samples)
        assert shift == pytest.approx(3.0 * math.log(2.0), abs=1e-10)

    def test_too_few_samples(self):
        with pytest.raises(ValidationError):
            stats.entropy_knn(np.eye(3), k=4)

    def test_duplicates(self, cloud):
        samples = np.vstack([cloud, cloud[:3]])
        with pytest.raises(ValidationError):
            stats.entropy_knn(samples, strict=True)
        assert math.isfinite(stats.entropy_knn(samples, strict=False))


class TestFisher:
    def test_gaussian(self):
        """Test the plug-in value against the Gaussian smoothed by the bandwidth"""
        n = 4000
        samples = np.random.default_rng(5).standard_normal((n, 3))
        h2 = n ** (-2.0 / 7.0)
        assert stats.fisher_kde(samples) == pytest.approx(3.0 / (1.0 + h2) ** 2, rel=0.05)

    def test_translation_invariant(self, rng):
        samples = rng.standard_normal((1200, 3))
        assert stats.fisher_kde(samples + 5.0) == pytest.approx(stats.fisher_kde(samples), rel=1e-9)

    def test_scaling(self, rng):
        samples = rng.standard_normal((1200, 3))
        assert stats.fisher_kde(2.0 * samples) == pytest.approx(stats.fisher_kde(samples) / 4.0, rel=1e-9)

    def test_rank_deficient(self, rng):
        planar = np.column_stack([rng.standard_normal((50, 2)), np.zeros(50)])
        with pytest.raises(ValidationError):
            stats.fisher_kde(planar, min_samples=10)

    def test_too_few_samples(self, cloud):
        with pytest.raises(ValidationError):
            stats.fisher_kde(cloud)


class TestMoments:
    def test_second_moment(self):
        assert stats.second_moment([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]) == pytest.approx(2.5)

    def test_moment_bound(self):
        assert stats.moment_bound(1.0, 0.5, 2.0) == pytest.approx(15.0)


class TestDiagnosticsRow:
    def test_columns_and_values(self, cloud):
        row = stats.diagnostics_row(0.5, cloud, KernelSpec(0.5), martingale=0.1, work=0.2)
        assert list(row) == list(DIAGNOSTICS_COLUMNS)
        assert row["m2"] == pytest.approx(stats.second_moment(cloud))
        assert row["min_dist"] == pytest.approx(stats.min_pair_distance(cloud))
        assert math.isnan(row["fisher_est"])

    def test_single_particle(self):
        row = stats.diagnostics_row(0.0, [[1.0, 0.0, 0.0]], KernelSpec(0.5), martingale=0.0, work=0.0,
                                    with_entropy=False)
        assert math.isnan(row["min_dist"])
        assert row["energy"] == 0.0

    def test_coincident_particles_are_rejected(self, cloud):
        pos = np.vstack([cloud, cloud[:1]])
        with pytest.raises(SchemaError, match="distinct"):
            stats.diagnostics_row(0.0, pos, KernelSpec(0.5), martingale=0.0, work=0.0,
                                  with_entropy=False, with_fisher=False)


class TestContinuumFunctionals:
    def test_uniform_ball_energy(self):
        for radius in (1.0, 2.0):
            field = _uniform_ball_field(radius)
            assert stats.continuum_energy(field) == pytest.approx(3.0 / (20.0 * math.pi * radius), rel=1e-12)

    def test_energy_ignores_empty_outer_cells(self):
        inner = stats.continuum_energy(_uniform_ball_field(1.0, cells=32))
        padded = stats.continuum_energy(_uniform_ball_field(1.0, cells=64, outer=2.0))
        assert padded == pytest.approx(inner, rel=1e-12)

    def test_dirichlet_form_matches(self, rng):
        from app.services.pde import gauss_solve

        edges = np.linspace(0.0, 3.0, 41)
        field = RadialField(edges, rng.uniform(0.0, 1.0, 40))
        gauss = gauss_solve(field)
        assert gauss.dirichlet_energy() == pytest.approx(gauss.potential_energy(), rel=1e-12)

    def test_uniform_ball_entropy_and_l2(self):
        radius = 1.5
        field = _uniform_ball_field(radius)
        density = 3.0 / (FOUR_PI * radius**3)
        assert stats.continuum_entropy(field) == pytest.approx(math.log(density), rel=1e-12)
        assert stats.l2_norm_sq(field) == pytest.approx(density, rel=1e-12)
        assert stats.continuum_fisher(field) == 0.0

    def test_fisher_of_gaussian_field(self):
        from app.services.pde import initial_field
        from app.services.sde import InitialDensity

        field = initial_field(InitialDensity.gaussian(1.0), cells=800, radius=8.0)
        assert stats.continuum_fisher(field) == pytest.approx(3.0, rel=1e-2)
