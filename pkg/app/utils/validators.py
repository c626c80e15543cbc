"""
Input validation utilities for particle clouds, radial tables and seed lists.
Each validator raises ValidationError with the offending quantity named in the message.
"""

import logging
from typing import Iterable, List, Optional, Tuple

import numpy as np

from app.utils.exceptions import ValidationError

logger = logging.getLogger(__name__)


def validate_positions(positions, min_count: int = 1, name: str = "positions") -> np.ndarray:
    """
    Validate an N x 3 array of particle positions.

    Args:
        positions: Array-like of shape (N, 3)
        min_count: Smallest acceptable N
        name: Name used in error messages

    Returns:
        The positions as a float64 array

    Raises:
        ValidationError: Wrong shape, too few rows or non-finite coordinates
    """
    arr = np.asarray(positions, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError(
            f"{name} must have shape (N, 3), got {arr.shape}",
            details={"shape": list(arr.shape)}
        )
    if arr.shape[0] < min_count:
        raise ValidationError(
            f"{name} needs at least {min_count} particles, got {arr.shape[0]}",
            details={"count": int(arr.shape[0]), "min_count": min_count}
        )
    if not np.all(np.isfinite(arr)):
        bad = int(np.count_nonzero(~np.isfinite(arr).all(axis=1)))
        raise ValidationError(
            f"{name} contains {bad} particles with non-finite coordinates",
            details={"non_finite_rows": bad}
        )
    return arr


def validate_vector(x, name: str = "x") -> np.ndarray:
    """
    Validate a single 3-vector or a stack of 3-vectors (..., 3).
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1:] != (3,):
        raise ValidationError(f"{name} must end in a dimension of size 3, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite coordinates")
    return arr


def shell_segment_mass(a, b, offset, slope):
    """
    4*pi * int_a^b r^2 (offset + slope * r) dr: shell mass of one linear segment of a radial table.
    """
    return 4.0 * np.pi * (offset * (b**3 - a**3) / 3.0 + slope * (b**4 - a**4) / 4.0)


def radial_table_segments(radii, density) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Piecewise-linear reading of a radial table.

    Returns:
        Tuple of (offset, slope, cumulative) where segment i is offset[i] + slope[i] * r on
        [radii[i], radii[i+1]] and cumulative[i] is the exact mass inside radii[i]
    """
    r = np.asarray(radii, dtype=np.float64)
    rho = np.asarray(density, dtype=np.float64)
    slope = np.diff(rho) / np.diff(r)
    offset = rho[:-1] - slope * r[:-1]
    cumulative = np.concatenate(([0.0], np.cumsum(shell_segment_mass(r[:-1], r[1:], offset, slope))))
    return offset, slope, cumulative


def check_radial_table(radii, density, mass_tol: float = 1e-6) -> Tuple[bool, Optional[str]]:
    """
    Check that a tabulated radial density is a valid probability density on R^3.

    Args:
        radii: Strictly increasing radii starting at 0
        density: Non-negative density values at those radii
        mass_tol: Allowed deviation of the mass 4*pi*int r^2 rho dr from 1, with rho linear
            between nodes

    Returns:
        Tuple of (is_valid, error_message)
    """
    r = np.asarray(radii, dtype=np.float64)
    rho = np.asarray(density, dtype=np.float64)

    if r.ndim != 1 or rho.shape != r.shape:
        return False, "radii and density must be 1-D arrays of equal length"
    if r.size < 2:
        return False, "radial table needs at least two points"
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(rho))):
        return False, "radial table contains non-finite values"
    if r[0] != 0.0:
        return False, "radial table must start at r = 0"
    if np.any(np.diff(r) <= 0.0):
        return False, "radii must be strictly increasing"
    if np.any(rho < 0.0):
        return False, "density must be non-negative"

    mass = float(radial_table_segments(r, rho)[2][-1])
    if abs(mass - 1.0) > mass_tol:
        return False, f"radial table has mass {mass:.9g}, expected 1"

    return True, None


def validate_radial_table(radii, density, mass_tol: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """
    Validate a radial density table, raising ValidationError when it is not a probability density.
    """
    is_valid, error = check_radial_table(radii, density, mass_tol)
    if not is_valid:
        logger.warning("Rejected radial density table: %s", error)
        raise ValidationError(f"Invalid density table: {error}")
    return np.asarray(radii, dtype=np.float64), np.asarray(density, dtype=np.float64)


def validate_seeds(seeds: Iterable[int]) -> List[int]:
    """
    Validate that seeds are distinct non-negative 64-bit integers.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValidationError("at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ValidationError("seeds must be distinct", details={"seeds": seeds})
    if any(s < 0 or s >= 2**64 for s in seeds):
        raise ValidationError("seeds must lie in [0, 2**64)", details={"seeds": seeds})
    return seeds
