"""
Tests for initial sampling, the Euler-Maruyama integrator and collision monitoring.
"""

import math

import numpy as np
import pytest

from app.schemas.results import DIAGNOSTICS_COLUMNS
from app.services import stats
from app.services.kernel import KernelSpec, pairwise_forces
from app.services.sde import (
    InitialDensity,
    ParticleEnsemble,
    RunSpec,
    StepPolicy,
    Trajectory,
    coupled_refinement,
    free_diffusion_msd,
    max_stable_dt,
    output_steps,
    sample_initial,
    simulate,
    step,
    stopping_probability,
    stopping_time,
    strong_errors,
    strong_order,
)
from app.utils.exceptions import StepSizeError, ValidationError


@pytest.fixture
def small_run():
    """An 8-particle, two-step configuration."""
    return RunSpec(n_particles=8, epsilon=0.5, T=0.02, rho0=InitialDensity.gaussian(), seed=3,
                   dt=0.01, output_times=2)


def _uniform_table(radius: float = 1.0, points: int = 201):
    r = np.linspace(0.0, radius, points)
    rho = np.full_like(r, 3.0 / (4.0 * np.pi * radius**3))
    return r, rho


class TestInitialDensity:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValidationError):
            InitialDensity("plummer")

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValidationError):
            InitialDensity.gaussian(0.0)
        with pytest.raises(ValidationError):
            InitialDensity.uniform_ball(-1.0)
        with pytest.raises(ValidationError):
            InitialDensity.radial_table([0.0, 1.0], [1.0, 1.0])

    def test_gaussian_sample_moments(self):
        samples = InitialDensity.gaussian(2.0).sample(20000, seed=1)
        assert samples.shape == (20000, 3)
        assert np.all(np.abs(samples.mean(axis=0)) < 0.1)
        assert stats.second_moment(samples) == pytest.approx(12.0, rel=0.03)

    def test_uniform_ball_samples_stay_inside(self):
        rho0 = InitialDensity.uniform_ball(1.5)
        samples = rho0.sample(20000, seed=2)
        assert np.max(np.linalg.norm(samples, axis=1)) <= 1.5
        assert stats.second_moment(samples) == pytest.approx(rho0.second_moment(), rel=0.03)

    def test_radial_table_matches_uniform_ball(self):
        r, rho = _uniform_table()
        table = InitialDensity.radial_table(r, rho)
        ball = InitialDensity.uniform_ball(1.0)
        grid = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(table.enclosed_mass(grid), ball.enclosed_mass(grid), atol=1e-12)
        assert table.second_moment() == pytest.approx(0.6, rel=1e-12)
        samples = table.sample(5000, seed=4)
        assert np.max(np.linalg.norm(samples, axis=1)) <= 1.0 + 1e-12

    def test_radial_table_accepts_linear_profile(self):
        r = np.linspace(0.0, 1.0, 5)
        table = InitialDensity.radial_table(r, 3.0 / np.pi * (1.0 - r))
        grid = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(table.enclosed_mass(grid), 4 * grid**3 - 3 * grid**4, atol=1e-12)
        assert table.enclosed_mass(1.0) == pytest.approx(1.0, abs=1e-12)
        assert table.second_moment() == pytest.approx(0.4, rel=1e-12)

    def test_radial_table_rejects_unnormalized_profile(self):
        r = np.linspace(0.0, 1.0, 5)
        with pytest.raises(ValidationError, match="mass"):
            InitialDensity.radial_table(r, 2.0 / np.pi * (1.0 - r))

    def test_gaussian_mass_split(self):
        rho0 = InitialDensity.gaussian(1.0)
        r = np.array([0.0, 0.5, 1.0, 3.0, 8.0])
        np.testing.assert_allclose(rho0.enclosed_mass(r) + rho0.tail_mass(r), 1.0, atol=1e-14)
        assert rho0.tail_mass(8.0) > 0.0

    def test_sampling_is_deterministic(self):
        rho0 = InitialDensity.gaussian()
        np.testing.assert_array_equal(rho0.sample(100, seed=9), rho0.sample(100, seed=9))
        assert not np.array_equal(rho0.sample(100, seed=9), rho0.sample(100, seed=10))

    def test_rejects_empty_sample(self):
        with pytest.raises(ValidationError):
            InitialDensity.gaussian().sample(0, seed=1)


class TestStepPolicy:
    def test_max_stable_dt(self):
        assert max_stable_dt(0.1) == pytest.approx(math.pi * 1e-3)
        assert max_stable_dt(0.05) == pytest.approx(math.pi * 0.05**3)

    def test_rejects_non_positive_dt(self):
        with pytest.raises(ValidationError):
            StepPolicy(dt=0.0)
        with pytest.raises(ValidationError):
            StepPolicy(dt=float("nan"))

    def test_rejects_unknown_scheme(self):
        with pytest.raises(ValidationError):
            StepPolicy(dt=0.1, scheme="milstein")


class TestStep:
    def test_deterministic_step_is_drift_only(self, cloud):
        spec = KernelSpec(0.3)
        ens = ParticleEnsemble(cloud, seed=1)
        moved = step(ens, spec, StepPolicy(dt=1e-3, noise=False))
        expected = cloud + pairwise_forces(cloud, spec) * 1e-3
        np.testing.assert_allclose(moved.positions, expected, rtol=0, atol=1e-15)
        assert moved.t == pytest.approx(1e-3)
        assert moved.step == 1

    def test_same_seed_same_step(self, cloud):
        spec = KernelSpec(0.3)
        policy = StepPolicy(dt=1e-3)
        a = step(ParticleEnsemble(cloud, seed=5), spec, policy)
        b = step(ParticleEnsemble(cloud, seed=5), spec, policy)
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_mirror_symmetry(self, cloud):
        """Test that reflecting positions and noise reflects the update"""
        spec = KernelSpec(0.3)
        policy = StepPolicy(dt=1e-3)
        ens = ParticleEnsemble(cloud, seed=2)
        increments = ens.streams.brownian_increment(ens.labels, 0, policy.dt)
        plus = step(ens, spec, policy, increments=increments)
        minus = step(ParticleEnsemble(-cloud, seed=2), spec, policy, increments=-increments)
        np.testing.assert_allclose(minus.positions, -plus.positions, rtol=0, atol=1e-14)

    def test_centre_of_mass_without_noise(self, cloud):
        spec = KernelSpec(0.2)
        ens = ParticleEnsemble(cloud, seed=1)
        policy = StepPolicy(dt=1e-3, noise=False)
        for _ in range(5):
            ens = step(ens, spec, policy)
        np.testing.assert_allclose(ens.positions.mean(axis=0), cloud.mean(axis=0), rtol=0, atol=1e-12)

    def test_exchangeable_under_relabeling(self, cloud, rng):
        spec = KernelSpec(0.3)
        policy = StepPolicy(dt=1e-3)
        ens = ParticleEnsemble(cloud, seed=8)
        order = rng.permutation(cloud.shape[0])
        relabeled = step(ens.permuted(order), spec, policy)
        np.testing.assert_allclose(relabeled.positions, step(ens, spec, policy).positions[order],
                                   rtol=0, atol=1e-13)

    def test_drift_cap_rejects_large_step(self):
        spec = KernelSpec(0.1)
        ens = ParticleEnsemble([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]], seed=1)
        with pytest.raises(StepSizeError) as exc_info:
            step(ens, spec, StepPolicy(dt=1.0))
        assert "reduce dt" in str(exc_info.value)
        assert exc_info.value.details["epsilon"] == 0.1

    def test_drift_cap_can_be_disabled(self):
        spec = KernelSpec(0.1)
        ens = ParticleEnsemble([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]], seed=1)
        moved = step(ens, spec, StepPolicy(dt=1.0, drift_cap_check=False))
        assert np.all(np.isfinite(moved.positions))

    def test_rejects_mismatched_labels(self, cloud):
        with pytest.raises(ValidationError):
            ParticleEnsemble(cloud, labels=np.arange(3))


class TestSimulate:
    def test_diagnostics_rows(self, small_run):
        trajectory = simulate(small_run)
        assert trajectory.n_steps == 2
        np.testing.assert_allclose(trajectory.times, [0.0, 0.01, 0.02])
        assert len(trajectory.diagnostics) == 3
        for row in trajectory.diagnostics:
            assert list(row) == list(DIAGNOSTICS_COLUMNS)
        first = trajectory.diagnostics[0]
        assert first["martingale"] == 0.0
        assert first["work"] == 0.0
        assert math.isnan(first["fisher_est"])

    def test_reproducible(self, small_run):
        a = simulate(small_run)
        b = simulate(small_run)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.martingale, b.martingale)

    def test_zero_horizon(self, small_run):
        small_run.T = 0.0
        trajectory = simulate(small_run)
        assert trajectory.n_steps == 0
        np.testing.assert_array_equal(trajectory.times, [0.0])
        np.testing.assert_array_equal(trajectory.positions[0], small_run.rho0.sample(8, small_run.seed))

    def test_increments_sum_to_path_noise(self, small_run):
        trajectory = simulate(small_run)
        # one step per output interval
        k = 1
        expected = (trajectory.positions[k - 1] + trajectory.drifts[k - 1] * trajectory.dt
                    + math.sqrt(2.0) * trajectory.increments[k - 1])
        np.testing.assert_allclose(trajectory.positions[k], expected, rtol=0, atol=1e-14)

    def test_single_particle_is_brownian(self):
        run = RunSpec(n_particles=1, epsilon=0.1, T=0.01, rho0=InitialDensity.gaussian(), seed=1,
                      dt=0.005, output_times=2, with_entropy=False)
        trajectory = simulate(run)
        np.testing.assert_array_equal(trajectory.drifts, np.zeros_like(trajectory.drifts))
        assert np.all(trajectory.martingale == 0.0)

    def test_index_of(self, small_run):
        trajectory = simulate(small_run)
        assert trajectory.index_of(0.01) == 1
        with pytest.raises(ValidationError):
            trajectory.index_of(0.015)

    def test_output_steps(self):
        steps = output_steps(10, 4)
        assert steps[0] == 0 and steps[-1] == 10
        assert len(steps) == 5
        assert np.all(np.diff(steps) > 0)
        np.testing.assert_array_equal(output_steps(2, 8), [0, 1, 2])


class TestCalibration:
    def test_free_diffusion_msd(self):
        mean, se = free_diffusion_msd(4000, t=0.5, dt=0.05, seed=3)
        assert abs(mean - 3.0) <= 4.0 * se
        assert se > 0.0

    def test_free_diffusion_needs_paths(self):
        with pytest.raises(ValidationError):
            free_diffusion_msd(1, t=0.5, dt=0.05)

    def test_coupled_refinement_strong_order(self):
        spec = KernelSpec(0.5)
        ens = sample_initial(InitialDensity.gaussian(), 16, seed=6)
        dt = 0.05
        terminals = coupled_refinement(ens, spec, dt, T=4 * dt, levels=4, drift_cap_check=False)
        assert len(terminals) == 5
        errors = strong_errors(terminals)
        dts = dt / 2.0 ** np.arange(4)
        assert strong_order(errors, dts) >= 0.8

    def test_coupled_refinement_rejects_partial_steps(self):
        ens = sample_initial(InitialDensity.gaussian(), 4, seed=6)
        with pytest.raises(ValidationError):
            coupled_refinement(ens, KernelSpec(0.5), 0.1, T=0.15, levels=2)

    def test_strong_order_rejects_zero_error(self):
        with pytest.raises(ValidationError):
            strong_order([0.0, 0.1], [0.1, 0.05])


class TestStoppingTime:
    def _trajectory(self, frames, times):
        frames = np.asarray(frames, dtype=np.float64)
        k = len(times)
        return Trajectory(
            times=np.asarray(times), positions=frames, drifts=np.zeros_like(frames),
            martingale=np.zeros(k), work=np.zeros(k), collision=np.zeros(k),
            epsilon=0.1, seed=0, dt=0.1, n_steps=k - 1,
        )

    def test_first_contact(self):
        frames = [
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]],
            [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]],
            [[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]],
        ]
        trajectory = self._trajectory(frames, [0.0, 0.1, 0.2, 0.3])
        assert stopping_time(trajectory, 0.1) == pytest.approx(0.2)
        assert stopping_time(trajectory, 0.001) is None

    def test_single_particle_never_stops(self):
        trajectory = self._trajectory([[[0.0, 0.0, 0.0]]], [0.0])
        assert stopping_time(trajectory, 1.0) is None

    def test_stopping_probability(self):
        p, se = stopping_probability([None, 0.1, None, 0.2])
        assert p == 0.5
        assert se == pytest.approx(0.25)
        with pytest.raises(ValidationError):
            stopping_probability([])

    def test_min_pair_distance_matches_brute_force(self, rng):
        pos = rng.standard_normal((50, 3))
        brute = min(np.linalg.norm(pos[i] - pos[j]) for i in range(50) for j in range(i + 1, 50))
        assert stats.min_pair_distance(pos) == pytest.approx(brute, rel=1e-14)

    def test_min_pair_distance_with_duplicates(self, cloud):
        pos = np.vstack([cloud, cloud[:1]])
        assert stats.min_pair_distance(pos) == 0.0
