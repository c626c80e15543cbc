"""
Estimators for the functionals tracked along the particle dynamics: Coulomb energy,
entropy, Fisher information and moments, plus their continuum counterparts on radial fields.

Entropy follows the convention H = int rho log rho, so spread-out densities are negative.
"""

import logging
from typing import Any, Dict, Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, softmax

from app.config import AppConfig
from app.schemas.results import DiagnosticsRow
from app.services.kernel import (
    FOUR_PI,
    KernelSpec,
    _mollified_potential_unchecked,
    _mollifier_density_unchecked,
    _row_blocks,
)
from app.utils.exceptions import SingularityError, ValidationError
from app.utils.validators import validate_positions

logger = logging.getLogger(__name__)

UNIT_BALL_VOLUME = 4.0 * np.pi / 3.0


def _pair_row_sums(pos: np.ndarray, profile, exact: bool = False) -> np.ndarray:
    """
    Row sums s_i = sum_{j != i} profile(|x_i - x_j|) in fixed block order.
    """
    n = pos.shape[0]
    sums = np.zeros(n)
    for start, stop in _row_blocks(n):
        diff = pos[start:stop, None, :] - pos[None, :, :]
        r = np.sqrt(np.sum(diff * diff, axis=-1))
        rows = np.arange(start, stop)
        if exact:
            r[rows - start, rows] = np.inf
            if np.any(r == 0.0):
                raise SingularityError("Exact Coulomb energy undefined: two particles coincide")
            sums[start:stop] = (1.0 / (FOUR_PI * r)).sum(axis=1)
        else:
            values = profile(r)
            values[rows - start, rows] = 0.0
            sums[start:stop] = values.sum(axis=1)
    return sums


def _energy_rows(positions, spec: Optional[KernelSpec]) -> np.ndarray:
    pos = validate_positions(positions)
    if pos.shape[0] < 2:
        return np.zeros(pos.shape[0])
    if spec is None:
        return _pair_row_sums(pos, None, exact=True)
    eps = spec.epsilon
    return _pair_row_sums(pos, lambda r: _mollified_potential_unchecked(r, eps))


def empirical_energy(positions, spec: Optional[KernelSpec] = None) -> float:
    """
    Pair energy E_N = (1 / 2N^2) sum_{i != j} g(x_i - x_j).

    Args:
        positions: N x 3 positions
        spec: Mollified kernel g_eps when given, exact kernel g when None

    Raises:
        SingularityError: Coincident pair with the exact kernel
    """
    rows = _energy_rows(positions, spec)
    n = rows.size
    if n < 2:
        return 0.0
    return float(rows.sum() / (2.0 * n * n))


def empirical_energy_se(positions, spec: Optional[KernelSpec] = None) -> float:
    """
    Standard error of empirical_energy as a U-statistic: ((N-1)/2N) * 2 std(gbar_i) / sqrt(N),
    where gbar_i is particle i's mean interaction with the others.
    """
    rows = _energy_rows(positions, spec)
    n = rows.size
    if n < 3:
        return 0.0
    gbar = rows / (n - 1)
    return float((n - 1) / (2.0 * n) * 2.0 * np.std(gbar, ddof=1) / np.sqrt(n))


def collision_rate(positions, spec: KernelSpec) -> float:
    """
    (1/N^2) sum_{i != j} J_eps(x_i - x_j), the non-negative term the energy relation drops.
    """
    pos = validate_positions(positions)
    n = pos.shape[0]
    if n < 2:
        return 0.0
    eps = spec.epsilon
    rows = _pair_row_sums(pos, lambda r: _mollifier_density_unchecked(r, eps))
    return float(rows.sum() / (n * n))


def second_moment(samples) -> float:
    """
    (1/N) sum |x_i|^2.
    """
    pos = validate_positions(samples, name="samples")
    return float(np.mean(np.sum(pos * pos, axis=1)))


def min_pair_distance(positions) -> float:
    """
    Smallest distance over unordered pairs, via nearest-neighbour queries.

    Raises:
        ValidationError: Fewer than two particles
    """
    pos = validate_positions(positions, min_count=2)
    _, nn = cKDTree(pos).query(pos, k=2)
    own = np.arange(pos.shape[0])[:, None]
    # recompute with the same arithmetic as a brute-force pair loop
    dist = np.linalg.norm(pos[:, None, :] - pos[nn], axis=-1)
    # with duplicates the query may return the other copy before the particle itself
    dist[nn == own] = np.inf
    return float(dist.min())


def entropy_knn(samples, k: Optional[int] = None, strict: Optional[bool] = None, seed: int = 0) -> float:
    """
    Kozachenko-Leonenko k-nearest-neighbour estimate of int rho log rho (negative differential entropy).

    Args:
        samples: N x 3 samples
        k: Neighbour rank (default KNN_NEIGHBORS)
        strict: Raise on duplicate points instead of jittering them
        seed: Seed for the jitter

    Returns:
        Entropy estimate in the int rho log rho sign convention

    Raises:
        ValidationError: N <= k, or duplicate points in strict mode
    """
    k = k or AppConfig.ESTIMATORS.KNN_NEIGHBORS
    strict = AppConfig.ESTIMATORS.ENTROPY_STRICT if strict is None else strict
    x = validate_positions(samples, min_count=k + 1, name="samples")
    n, d = x.shape

    dist, _ = cKDTree(x).query(x, k=k + 1)
    if np.any(dist[:, 1] == 0.0):
        duplicates = int(np.count_nonzero(dist[:, 1] == 0.0))
        if strict:
            raise ValidationError(
                f"entropy estimate needs distinct samples, found {duplicates} duplicates",
                details={"duplicates": duplicates}
            )
        logger.warning("⚠️ entropy_knn: jittering %d duplicate samples", duplicates)
        from app.services.rng import generator, AUXILIARY_STREAM
        scale = 1e-10 * max(float(np.std(x)), 1.0)
        x = x + scale * generator(seed, AUXILIARY_STREAM).standard_normal(x.shape)
        dist, _ = cKDTree(x).query(x, k=k + 1)

    radius = dist[:, k]
    differential = digamma(n) - digamma(k) + np.log(UNIT_BALL_VOLUME) + d * np.mean(np.log(radius))
    return float(-differential)


def fisher_kde(samples, n_eval: Optional[int] = None, min_samples: Optional[int] = None) -> float:
    """
    Plug-in Fisher information int |grad rho|^2 / rho from a product-Gaussian KDE.

    Bandwidth is sigma_d * N^(-1/7) per coordinate. The score of the leave-one-out estimate is
    averaged over the first n_eval samples as E |grad log rho_hat|^2.

    Raises:
        ValidationError: Too few samples or a rank-deficient cloud
    """
    n_eval = n_eval or AppConfig.ESTIMATORS.FISHER_EVAL_POINTS
    min_samples = AppConfig.ESTIMATORS.FISHER_MIN_SAMPLES if min_samples is None else min_samples
    x = validate_positions(samples, min_count=max(min_samples, 2), name="samples")
    n = x.shape[0]

    x = x - x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= 1e-12 * max(eig[-1], 1e-300):
        raise ValidationError(
            "Fisher information undefined for a degenerate (rank-deficient) sample cloud",
            details={"covariance_eigenvalues": eig.tolist()}
        )

    h = x.std(axis=0, ddof=1) * n ** (-1.0 / 7.0)
    z = x / h
    m = min(n_eval, n)

    total = 0.0
    block = max(1, (1 << 22) // (3 * n))
    for start in range(0, m, block):
        stop = min(start + block, m)
        diff = z[start:stop, None, :] - z[None, :, :]
        logw = -0.5 * np.sum(diff * diff, axis=-1)
        rows = np.arange(start, stop)
        logw[rows - start, rows] = -np.inf
        w = softmax(logw, axis=1)
        score = -np.einsum("bj,bjd->bd", w, diff) / h
        total += float(np.sum(score * score))
    return total / m


def moment_bound(m2_0: float, energy_0: float, t: float) -> float:
    """
    Upper bound for E|X_t|^2: d/dt E|X|^2 = 6 + 2 E[X . b] and E[X . b] <= E_N(t) <= E_N(0).
    """
    return float(m2_0 + 2.0 * t * energy_0 + 6.0 * t)


def diagnostics_row(t: float, positions: np.ndarray, spec: KernelSpec, martingale: float, work: float,
                    with_entropy: bool = True, with_fisher: Optional[bool] = None,
                    knn_k: Optional[int] = None) -> Dict[str, Any]:
    """
    One diagnostics record in DiagnosticsRow column order, checked by the model;
    unavailable estimates are nan.
    """
    n = len(positions)
    if with_fisher is None:
        with_fisher = n >= AppConfig.ESTIMATORS.FISHER_MIN_SAMPLES
    k = knn_k or AppConfig.ESTIMATORS.KNN_NEIGHBORS

    try:
        energy = empirical_energy(positions)
    except SingularityError:
        energy = float("inf")

    row = DiagnosticsRow(
        t=float(t),
        energy=energy,
        energy_mollified=empirical_energy(positions, spec),
        entropy_est=entropy_knn(positions, k=k) if with_entropy and n > k else float("nan"),
        fisher_est=fisher_kde(positions) if with_fisher else float("nan"),
        m2=second_moment(positions),
        min_dist=min_pair_distance(positions) if n >= 2 else float("nan"),
        martingale=float(martingale),
        work=float(work),
    )
    return row.model_dump()


# --- continuum functionals of radial fields -------------------------------------------------

def continuum_energy(field) -> float:
    """
    E(rho) = (1/2) int h rho for a piecewise-constant radial field, integrated exactly per cell.
    """
    from app.services.pde import gauss_solve
    return gauss_solve(field).potential_energy()


def continuum_entropy(field) -> float:
    """
    int rho log rho over the radial cells (0 log 0 = 0).
    """
    rho = np.asarray(field.rho)
    vol = field.cell_volumes
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rho > 0.0, rho * np.log(np.where(rho > 0.0, rho, 1.0)), 0.0)
    return float(np.sum(vol * terms))


def continuum_fisher(field) -> float:
    """
    int |grad rho|^2 / rho in the edge form sum_e A_e (rho_{i+1} - rho_i)(log rho_{i+1} - log rho_i) / dc_e,
    which is the dissipation the finite-volume diffusion produces; edges touching an empty cell are skipped.
    """
    rho = np.asarray(field.rho)
    left, right = rho[:-1], rho[1:]
    ok = (left > 0.0) & (right > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dlog = np.where(ok, np.log(np.where(ok, right, 1.0)) - np.log(np.where(ok, left, 1.0)), 0.0)
    areas = FOUR_PI * field.r_edges[1:-1] ** 2
    dc = np.diff(field.centers)
    return float(np.sum(areas * (right - left) * dlog / dc))


def l2_norm_sq(field) -> float:
    """
    int rho^2.
    """
    rho = np.asarray(field.rho)
    return float(np.sum(field.cell_volumes * rho * rho))
