"""
Propagation-of-chaos checks: distance of the empirical time-marginal to the radial PDE solution
and decay of two-particle correlations across seeds.
"""

import logging
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.stats import kstest, wasserstein_distance

from app.schemas.results import ChaosReport
from app.services.pde import RadialField
from app.services.rng import AUXILIARY_STREAM, generator
from app.services.weakform import TestFunction
from app.utils.exceptions import ValidationError
from app.utils.validators import validate_positions

logger = logging.getLogger(__name__)

MIN_SEEDS = 8
MASS_TOL = 1e-6


def _checked_reference(rho: RadialField) -> RadialField:
    mass = rho.mass()
    if abs(mass - 1.0) > MASS_TOL:
        raise ValidationError(
            f"reference density has mass {mass:.9g}; a normalized radial density is required",
            details={"mass": mass}
        )
    return rho


def reference_radial_cdf(rho: RadialField, r) -> np.ndarray:
    """
    int_0^r 4 pi s^2 rho ds for the cell data (linear in r^3 inside each cell, 1 beyond the wall).
    """
    r = np.asarray(r, dtype=np.float64)
    edges = rho.r_edges
    cumulative = np.concatenate(([0.0], np.cumsum(rho.cell_masses)))
    rc = np.clip(r, 0.0, edges[-1])
    idx = np.clip(np.searchsorted(edges, rc, side="right") - 1, 0, rho.cells - 1)
    inside = cumulative[idx] + 4.0 * np.pi / 3.0 * rho.rho[idx] * (rc**3 - edges[idx] ** 3)
    return np.minimum(inside / cumulative[-1], 1.0)


def empirical_radial_cdf(samples, r) -> np.ndarray:
    """
    Fraction of samples with |x| <= r.
    """
    radii = np.sort(np.linalg.norm(validate_positions(samples, name="samples"), axis=1))
    return np.searchsorted(radii, np.asarray(r, dtype=np.float64), side="right") / radii.size


def sample_radial_field(rho: RadialField, n: int, seed: int) -> np.ndarray:
    """
    n i.i.d. draws from a normalized radial field by exact inversion of its radial CDF.
    """
    _checked_reference(rho)
    gen = generator(seed, AUXILIARY_STREAM)
    u = gen.random(n)
    directions = gen.standard_normal((n, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]

    cumulative = np.concatenate(([0.0], np.cumsum(rho.cell_masses)))
    cumulative /= cumulative[-1]
    idx = np.clip(np.searchsorted(cumulative, u, side="right") - 1, 0, rho.cells - 1)
    # empty cells are never selected: their cumulative interval has zero width
    density = np.where(rho.rho[idx] > 0.0, rho.rho[idx], 1.0) / rho.mass()
    r3 = rho.r_edges[idx] ** 3 + (u - cumulative[idx]) / (4.0 * np.pi / 3.0 * density)
    radii = np.clip(np.cbrt(r3), rho.r_edges[idx], rho.r_edges[idx + 1])
    return radii[:, None] * directions


def radial_ks(samples, rho: RadialField) -> float:
    """
    Kolmogorov-Smirnov distance between the radii |X_i| and the reference radial CDF.

    Raises:
        ValidationError: Reference mass differs from 1 by more than 1e-6
    """
    _checked_reference(rho)
    radii = np.linalg.norm(validate_positions(samples, name="samples"), axis=1)
    return float(kstest(radii, lambda r: reference_radial_cdf(rho, r)).statistic)


def random_directions(count: int, seed: int = 0) -> np.ndarray:
    """
    count unit vectors, deterministic in seed.
    """
    if count < 1:
        raise ValidationError("at least one projection direction is required")
    d = generator(seed, AUXILIARY_STREAM, step=1).standard_normal((count, 3))
    return d / np.linalg.norm(d, axis=1)[:, None]


def projected_density(rho: RadialField, z: np.ndarray) -> np.ndarray:
    """
    Density of x . u for x ~ rho (any unit u): p(z) = int_{|z|}^inf 2 pi r rho(r) dr, exact per cell.
    """
    a = np.abs(np.asarray(z, dtype=np.float64))[:, None]
    r0 = rho.r_edges[None, :-1]
    r1 = rho.r_edges[None, 1:]
    lower = np.maximum(r0, a)
    pieces = np.where(r1 > a, np.pi * rho.rho[None, :] * (r1**2 - lower**2), 0.0)
    return pieces.sum(axis=1)


def sliced_w1(samples, reference: Union[np.ndarray, RadialField], directions: int = 64, seed: int = 0,
              grid_points: int = 4001) -> float:
    """
    Mean over random unit directions of the 1D Wasserstein-1 distance between projected samples and
    the projected reference (another sample set or a radial field).
    """
    x = validate_positions(samples, name="samples")
    units = random_directions(directions, seed)

    if isinstance(reference, RadialField):
        radius = reference.r_edges[-1]
        z = np.linspace(-radius, radius, grid_points)
        weights = projected_density(reference, z)
        return float(np.mean([wasserstein_distance(x @ u, z, v_weights=weights) for u in units]))

    y = validate_positions(reference, name="reference")
    return float(np.mean([wasserstein_distance(x @ u, y @ u) for u in units]))


def _cloud_stack(clouds) -> np.ndarray:
    stack = np.asarray(clouds, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[2] != 3:
        raise ValidationError(f"expected clouds of shape (seeds, N, 3), got {stack.shape}")
    if stack.shape[0] < MIN_SEEDS:
        raise ValidationError(
            f"pair covariance needs at least {MIN_SEEDS} seeds, got {stack.shape[0]}",
            details={"seeds": int(stack.shape[0])}
        )
    if stack.shape[1] < 2:
        raise ValidationError("pair covariance needs at least two particles per cloud")
    return stack


def _covariance_estimate(values: np.ndarray) -> float:
    """
    Var_seeds(mean_i phi) - mean_seeds(within-cloud variance) / N, for values of shape (S, N).
    """
    n = values.shape[1]
    means = values.mean(axis=1)
    within = values.var(axis=1, ddof=1)
    return float(np.var(means, ddof=1) - within.mean() / n)


def pair_covariance(clouds, phi: TestFunction) -> float:
    """
    Unbiased estimate of Cov(phi(X^1), phi(X^2)) = int int phi phi (f2 - f (x) f) from S independent clouds.

    Raises:
        ValidationError: Fewer than 8 seeds
    """
    stack = _cloud_stack(clouds)
    return _covariance_estimate(phi.value(stack))


def pair_covariance_se(clouds, phi: TestFunction) -> float:
    """
    Jackknife standard error of pair_covariance over seeds.
    """
    values = phi.value(_cloud_stack(clouds))
    s = values.shape[0]
    leave_one_out = np.array([_covariance_estimate(np.delete(values, j, axis=0)) for j in range(s)])
    return float(np.sqrt((s - 1) / s * np.sum((leave_one_out - leave_one_out.mean()) ** 2)))


def chaos_report(clouds, reference: RadialField, phis: Sequence[TestFunction], t: float, epsilon: float,
                 seeds: Sequence[int], directions: int = 64) -> ChaosReport:
    """
    Median radial KS and sliced W1 over seeds plus pair covariances per test function.
    """
    stack = np.asarray(clouds, dtype=np.float64)
    ks = [radial_ks(cloud, reference) for cloud in stack]
    w1 = [sliced_w1(cloud, reference, directions=directions, seed=seed) for cloud, seed in zip(stack, seeds)]

    cov: Dict[str, float] = {}
    cov_se: Dict[str, float] = {}
    if stack.shape[0] >= MIN_SEEDS:
        for phi in phis:
            cov[phi.label] = pair_covariance(stack, phi)
            cov_se[phi.label] = pair_covariance_se(stack, phi)
    else:
        logger.warning("⚠️ chaos report: %d seeds, pair covariance needs %d", stack.shape[0], MIN_SEEDS)

    return ChaosReport(
        N=int(stack.shape[1]),
        t=float(t),
        epsilon=float(epsilon),
        radial_ks=float(np.median(ks)),
        radial_ks_seeds=[float(v) for v in ks],
        sliced_w1=float(np.median(w1)),
        pair_cov=cov,
        pair_cov_se=cov_se,
        seeds=[int(s) for s in seeds],
    )
