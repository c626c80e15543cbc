"""
Tests for marginal distances to the reference solution and pair-covariance estimation.
"""

import math

import numpy as np
import pytest

from app.services import chaos, weakform
from app.services.pde import RadialField, initial_field
from app.services.sde import InitialDensity
from app.utils.exceptions import ValidationError


@pytest.fixture
def ball_field():
    """Unit-mass uniform ball of radius 1 on 50 cells."""
    edges = np.linspace(0.0, 1.0, 51)
    return RadialField(edges, np.full(50, 3.0 / (4.0 * math.pi)))


@pytest.fixture
def bump():
    return weakform.TestFunction("gaussian_bump", center=(0.5, 0.0, 0.0), width=0.8)


class TestRadialDistances:
    def test_reference_cdf(self, ball_field):
        np.testing.assert_allclose(chaos.reference_radial_cdf(ball_field, [0.0, 0.5, 1.0, 2.0]),
                                   [0.0, 0.125, 1.0, 1.0], atol=1e-14)

    def test_empirical_cdf(self):
        samples = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0], [4.0, 0.0, 0.0]])
        np.testing.assert_allclose(chaos.empirical_radial_cdf(samples, [0.5, 2.0, 5.0]), [0.0, 0.5, 1.0])

    def test_reference_samples_within_dkw(self, ball_field):
        n = 2000
        samples = chaos.sample_radial_field(ball_field, n, seed=3)
        assert np.max(np.linalg.norm(samples, axis=1)) <= 1.0 + 1e-12
        assert chaos.radial_ks(samples, ball_field) <= 1.63 / math.sqrt(n)

    def test_gaussian_samples_against_gaussian_field(self):
        field = initial_field(InitialDensity.gaussian(), cells=512, radius=8.0)
        samples = InitialDensity.gaussian().sample(4000, seed=5)
        assert chaos.radial_ks(samples, field) <= 1.63 / math.sqrt(4000)

    def test_rejects_unnormalized_reference(self, ball_field, cloud):
        heavy = ball_field.with_rho(2.0 * ball_field.rho)
        with pytest.raises(ValidationError):
            chaos.radial_ks(cloud, heavy)
        with pytest.raises(ValidationError):
            chaos.sample_radial_field(heavy, 10, seed=1)


class TestSlicedW1:
    def test_identical_clouds(self, cloud):
        assert chaos.sliced_w1(cloud, cloud) == 0.0

    def test_dilation(self, cloud):
        """Test W1 between x.u and 2x.u equals E|x.u| averaged over directions"""
        units = chaos.random_directions(64, seed=0)
        expected = np.mean([np.mean(np.abs(cloud @ u)) for u in units])
        assert chaos.sliced_w1(cloud, 2.0 * cloud, directions=64, seed=0) == pytest.approx(expected, rel=1e-12)

    def test_projected_density_of_ball(self, ball_field):
        z = np.linspace(-1.0, 1.0, 21)
        np.testing.assert_allclose(chaos.projected_density(ball_field, z), 0.75 * (1.0 - z**2), atol=1e-14)

    def test_samples_close_to_field(self, ball_field):
        samples = chaos.sample_radial_field(ball_field, 4000, seed=8)
        assert chaos.sliced_w1(samples, ball_field, directions=16) < 0.03

    def test_directions_are_unit(self):
        units = chaos.random_directions(10, seed=4)
        np.testing.assert_allclose(np.linalg.norm(units, axis=1), 1.0)
        with pytest.raises(ValidationError):
            chaos.random_directions(0)


class TestPairCovariance:
    def test_independent_particles(self, rng, bump):
        clouds = rng.standard_normal((64, 50, 3))
        cov = chaos.pair_covariance(clouds, bump)
        se = chaos.pair_covariance_se(clouds, bump)
        assert se > 0.0
        assert abs(cov) <= 4.0 * se

    def test_fully_correlated_particles(self, rng, bump):
        """Test that identical particles recover the one-particle variance"""
        draws = rng.standard_normal((40, 3))
        clouds = np.repeat(draws[:, None, :], 20, axis=1)
        expected = float(np.var(bump.value(draws), ddof=1))
        assert chaos.pair_covariance(clouds, bump) == pytest.approx(expected, rel=1e-12)

    def test_needs_eight_seeds(self, rng, bump):
        with pytest.raises(ValidationError):
            chaos.pair_covariance(rng.standard_normal((7, 20, 3)), bump)

    def test_rejects_bad_shape(self, rng, bump):
        with pytest.raises(ValidationError):
            chaos.pair_covariance(rng.standard_normal((8, 20)), bump)


class TestChaosReport:
    def test_report(self, ball_field, bump):
        clouds = [chaos.sample_radial_field(ball_field, 200, seed=s) for s in range(8)]
        report = chaos.chaos_report(clouds, ball_field, [bump], t=0.5, epsilon=0.1, seeds=list(range(8)),
                                    directions=8)
        assert report.N == 200
        assert len(report.radial_ks_seeds) == 8
        assert report.radial_ks == pytest.approx(float(np.median(report.radial_ks_seeds)))
        assert bump.label in report.pair_cov
        assert bump.label in report.pair_cov_se

    def test_report_skips_covariance_with_few_seeds(self, ball_field, bump):
        clouds = [chaos.sample_radial_field(ball_field, 100, seed=s) for s in range(3)]
        report = chaos.chaos_report(clouds, ball_field, [bump], t=0.5, epsilon=0.1, seeds=[0, 1, 2],
                                    directions=4)
        assert report.pair_cov == {}
