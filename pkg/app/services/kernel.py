"""
Exact and mollified 3D Coulomb potential / force evaluation.

The mollifier is the radial bump J(x) = c (1 - |x|^2)^3 on the unit ball, c = 315 / (64 pi).
For a radial mollifier the shell theorem gives closed forms:

    F_eps(x) = F(x) m(|x| / eps)
    g_eps(r) = g_1(r / eps) / eps,  g_1(s) = m(s) / (4 pi s) + c (1 - s^2)^4 / 8   (s < 1)

where m(s) is the fraction of the mollifier's mass inside radius s.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.config import AppConfig
from app.utils.exceptions import SingularityError, ValidationError
from app.utils.validators import validate_positions, validate_vector

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi

# J(x) = MOLLIFIER_NORM * (1 - |x|^2)^3, normalised so that int J = 1
MOLLIFIER_NORM = 315.0 / (64.0 * np.pi)

# m(s) / s^3 at s = 0; m(s) / s^3 is decreasing, so this is its supremum
_MASS_RATIO_AT_ZERO = 315.0 / 48.0

PROFILES = ("poly6",)


@dataclass(frozen=True)
class KernelSpec:
    """
    Mollification settings for the Coulomb kernel.

    Attributes:
        epsilon: Mollification radius (> 0)
        profile: Mollifier id; only the built-in radial bump "poly6" exists
        d: Spatial dimension, fixed at 3
    """

    epsilon: float
    profile: str = "poly6"
    d: int = 3

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValidationError(f"epsilon must be a positive finite length, got {self.epsilon}")
        if self.profile not in PROFILES:
            raise ValidationError(f"Unknown mollifier profile {self.profile!r}")
        if self.d != 3:
            raise ValidationError("Only d = 3 kernels are supported")


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def radial_mass(s) -> np.ndarray:
    """
    Fraction of the mollifier's mass inside radius s: m(s) = int_{|y| <= s} J dy.
    """
    s = np.asarray(s, dtype=np.float64)
    u = np.minimum(s, 1.0)
    u2 = u * u
    inner = (315.0 / 16.0) * u * u2 * (1.0 / 3.0 - u2 * (3.0 / 5.0 - u2 * (3.0 / 7.0 - u2 / 9.0)))
    return np.where(s >= 1.0, 1.0, inner)


def radial_mass_derivative(s) -> np.ndarray:
    """
    m'(s) = 4 pi s^2 J(s) on [0, 1], zero outside.
    """
    s = np.asarray(s, dtype=np.float64)
    inside = s < 1.0
    return np.where(inside, FOUR_PI * s**2 * MOLLIFIER_NORM * np.clip(1.0 - s**2, 0.0, None) ** 3, 0.0)


def mass_ratio(s) -> np.ndarray:
    """
    m(s) / s^3, evaluated without division inside the unit ball so it is finite at s = 0.
    """
    s = np.asarray(s, dtype=np.float64)
    s2 = s * s
    inner = (315.0 / 16.0) * (1.0 / 3.0 - s2 * (3.0 / 5.0 - s2 * (3.0 / 7.0 - s2 / 9.0)))
    with np.errstate(divide="ignore"):
        outer = 1.0 / np.where(s >= 1.0, s, 1.0) ** 3
    return np.where(s >= 1.0, outer, inner)


def force_bound_constant() -> float:
    """
    C = sup_s m(s) / (4 pi s^3), the constant of |F_eps(x)| <= C |x| / eps^3.
    """
    return _MASS_RATIO_AT_ZERO / FOUR_PI


def coulomb_potential(x) -> np.ndarray:
    """
    Exact Coulomb potential g(x) = 1 / (4 pi |x|).

    Args:
        x: A 3-vector or a stack of 3-vectors (..., 3)

    Returns:
        Scalar energy (or array of shape x.shape[:-1])

    Raises:
        SingularityError: Any x equals the origin
    """
    x = validate_vector(x)
    r = _norm(x)
    if np.any(r == 0.0):
        raise SingularityError("Coulomb potential is singular at x = 0")
    return 1.0 / (FOUR_PI * r)


def coulomb_force(x) -> np.ndarray:
    """
    Exact repulsive Coulomb force F(x) = -grad g(x) = x / (4 pi |x|^3).

    Raises:
        SingularityError: Any x equals the origin
    """
    x = validate_vector(x)
    r = _norm(x)
    if np.any(r == 0.0):
        raise SingularityError("Coulomb force is singular at x = 0")
    return x * (1.0 / (FOUR_PI * r**3))[..., None]


def mollified_force(x, spec: KernelSpec) -> np.ndarray:
    """
    Mollified force F_eps(x) = F(x) m(|x| / eps); equal to F(x) for |x| >= eps and 0 at x = 0.
    """
    x = validate_vector(x)
    return _mollified_force_unchecked(x, spec.epsilon)


def _mollified_force_unchecked(x: np.ndarray, epsilon: float) -> np.ndarray:
    r = _norm(x)
    outside = r >= epsilon
    # outside the core this is the same expression coulomb_force evaluates
    with np.errstate(divide="ignore", invalid="ignore"):
        far = 1.0 / (FOUR_PI * np.where(outside, r, 1.0) ** 3)
    near = mass_ratio(r / epsilon) / (FOUR_PI * epsilon**3)
    factor = np.where(outside, far, near)
    return x * factor[..., None]


def _potential_profile(s: np.ndarray) -> np.ndarray:
    """
    g_1(s): potential of the unit-radius mollifier at distance s.
    """
    s2 = s * s
    # m(s) / s as a polynomial so s = 0 is finite
    m_over_s = (315.0 / 16.0) * s2 * (1.0 / 3.0 - s2 * (3.0 / 5.0 - s2 * (3.0 / 7.0 - s2 / 9.0)))
    tail = MOLLIFIER_NORM * np.clip(1.0 - s2, 0.0, None) ** 4 / 8.0
    return m_over_s / FOUR_PI + tail


def mollified_potential(x, spec: KernelSpec) -> np.ndarray:
    """
    Mollified potential g_eps = J_eps * g in closed radial form; equal to g for |x| >= eps, finite at 0.
    """
    x = validate_vector(x)
    return _mollified_potential_unchecked(_norm(x), spec.epsilon)


def _mollified_potential_unchecked(r: np.ndarray, epsilon: float) -> np.ndarray:
    outside = r >= epsilon
    with np.errstate(divide="ignore"):
        far = 1.0 / (FOUR_PI * np.where(outside, r, 1.0))
    near = _potential_profile(np.where(outside, 0.0, r / epsilon)) / epsilon
    return np.where(outside, far, near)


def mollifier_density(x, spec: KernelSpec) -> np.ndarray:
    """
    J_eps(x) = J(x / eps) / eps^3.
    """
    x = validate_vector(x)
    return _mollifier_density_unchecked(_norm(x), spec.epsilon)


def _mollifier_density_unchecked(r: np.ndarray, epsilon: float) -> np.ndarray:
    s2 = (r / epsilon) ** 2
    return MOLLIFIER_NORM * np.clip(1.0 - s2, 0.0, None) ** 3 / epsilon**3


def _row_blocks(n: int, block_rows: Optional[int] = None):
    """
    Fixed row blocks over [0, n); each row's sum runs over all columns in index order.
    """
    step = block_rows or AppConfig.KERNEL.BLOCK_ROWS
    # keep the B x N x 3 temporary around 8M doubles
    step = max(1, min(step, (1 << 23) // max(3 * n, 1)))
    for start in range(0, n, step):
        yield start, min(start + step, n)


def pairwise_forces(positions, spec: KernelSpec, method: str = "direct",
                    theta: Optional[float] = None) -> np.ndarray:
    """
    Mean-field drift of the regularized system, row i = (1/N) sum_{j != i} F_eps(x_i - x_j).

    Args:
        positions: N x 3 particle positions
        spec: Kernel settings
        method: "direct" (O(N^2), fixed summation order) or "tree" (Barnes-Hut)
        theta: Opening angle for the tree method

    Returns:
        N x 3 drift array

    Raises:
        ValidationError: Non-finite positions or unknown method
    """
    pos = validate_positions(positions)
    n = pos.shape[0]

    if method == "tree":
        from app.services.treecode import tree_forces
        return tree_forces(pos, spec, theta=theta)
    if method != "direct":
        raise ValidationError(f"Unknown force method {method!r}; expected 'direct' or 'tree'")

    drift = np.zeros_like(pos)
    if n < 2:
        return drift

    for start, stop in _row_blocks(n):
        diff = pos[start:stop, None, :] - pos[None, :, :]
        # the self pair contributes F_eps(0) = 0
        drift[start:stop] = _mollified_force_unchecked(diff, spec.epsilon).sum(axis=1)
    return drift / n


def coulomb_drift(positions) -> np.ndarray:
    """
    Drift with the exact kernel, row i = (1/N) sum_{j != i} F(x_i - x_j).

    Raises:
        SingularityError: Two particles coincide
    """
    pos = validate_positions(positions)
    n = pos.shape[0]
    drift = np.zeros_like(pos)
    if n < 2:
        return drift

    for start, stop in _row_blocks(n):
        diff = pos[start:stop, None, :] - pos[None, :, :]
        r = _norm(diff)
        rows = np.arange(start, stop)
        r[rows - start, rows] = np.inf
        if np.any(r == 0.0):
            raise SingularityError("Exact Coulomb drift undefined: two particles coincide")
        drift[start:stop] = (diff / (FOUR_PI * r**3)[..., None]).sum(axis=1)
    return drift / n
