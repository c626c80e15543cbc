"""
Radial reference solver for the nonlinear Fokker-Planck equation

    d rho / dt = Lap rho + div(rho grad h),   -Lap h = rho,

restricted to radial data, where grad h follows from the enclosed mass (Gauss law).
Conservative finite volumes on [0, R]: centered diffusion, upwind advection, zero-flux walls.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import erf

from app.config import AppConfig
from app.services.sde import InitialDensity, output_steps
from app.utils.exceptions import SolverError, ValidationError

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi


@dataclass
class RadialField:
    """
    Cell-averaged radial density on edges 0 = r_0 < ... < r_M = R.
    """

    r_edges: np.ndarray
    rho: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.r_edges = np.asarray(self.r_edges, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.r_edges.ndim != 1 or self.r_edges.size < 2 or self.r_edges[0] != 0.0:
            raise ValidationError("radial grid must be a 1-D edge array starting at r = 0")
        if np.any(np.diff(self.r_edges) <= 0.0):
            raise ValidationError("radial edges must be strictly increasing")
        if self.rho.shape != (self.r_edges.size - 1,):
            raise ValidationError("one density value per radial cell is required")

    @property
    def cells(self) -> int:
        return self.rho.size

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.r_edges[1:] + self.r_edges[:-1])

    @property
    def cell_volumes(self) -> np.ndarray:
        return FOUR_PI * np.diff(self.r_edges**3) / 3.0

    @property
    def cell_masses(self) -> np.ndarray:
        return self.cell_volumes * self.rho

    def mass(self) -> float:
        return float(np.sum(self.cell_masses))

    def with_rho(self, rho: np.ndarray, t: Optional[float] = None) -> "RadialField":
        return RadialField(self.r_edges, rho, self.t if t is None else t)


@dataclass
class GaussField:
    """
    Enclosed mass and radial field of a piecewise-constant density.

    Inside cell i the enclosed mass is M(r) = a_i + b_i r^3 with b_i = 4 pi rho_i / 3, which makes
    every integral below exact for the cell data.
    """

    r_edges: np.ndarray
    rho: np.ndarray
    enclosed_mass: np.ndarray
    h_prime: np.ndarray

    @property
    def _coefficients(self):
        b = FOUR_PI * self.rho / 3.0
        a = self.enclosed_mass[:-1] - b * self.r_edges[:-1] ** 3
        a[0] = 0.0
        return a, b

    def potential_at_edges(self) -> np.ndarray:
        """
        h at the cell edges, with h(R) = M(R) / (4 pi R) matching the exterior solution.
        """
        r0, r1 = self.r_edges[:-1], self.r_edges[1:]
        a, b = self._coefficients
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(r0 > 0.0, 1.0 / np.where(r0 > 0.0, r0, 1.0) - 1.0 / r1, 0.0)
        increments = (a * inv + b * (r1**2 - r0**2) / 2.0) / FOUR_PI
        h = np.empty(self.r_edges.size)
        h[-1] = self.enclosed_mass[-1] / (FOUR_PI * self.r_edges[-1])
        h[:-1] = h[-1] + np.cumsum(increments[::-1])[::-1]
        return h

    def potential_energy(self) -> float:
        """
        (1/2) int rho h, integrated exactly cell by cell.
        """
        r0, r1 = self.r_edges[:-1], self.r_edges[1:]
        a, b = self._coefficients
        h = self.potential_at_edges()
        d3 = r1**3 - r0**3
        d2 = r1**2 - r0**2
        d5 = r1**5 - r0**5
        per_cell = (FOUR_PI * h[1:] * d3 / 3.0
                    + a * (d2 / 2.0 - d3 / (3.0 * r1))
                    + 0.5 * b * (r1**2 * d3 / 3.0 - d5 / 5.0))
        return float(0.5 * np.sum(self.rho * per_cell))

    def dirichlet_energy(self) -> float:
        """
        (1/2) int |grad h|^2 over all of R^3, exterior included.
        """
        r0, r1 = self.r_edges[:-1], self.r_edges[1:]
        a, b = self._coefficients
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(r0 > 0.0, 1.0 / np.where(r0 > 0.0, r0, 1.0) - 1.0 / r1, 0.0)
        interior = (a * a * inv + a * b * (r1**2 - r0**2) + b * b * (r1**5 - r0**5) / 5.0) / FOUR_PI
        exterior = self.enclosed_mass[-1] ** 2 / (FOUR_PI * self.r_edges[-1])
        return float(0.5 * (np.sum(interior) + exterior))

    def h_prime_at(self, r: np.ndarray, cell: np.ndarray) -> np.ndarray:
        """
        dh/dr at radii r lying in the given cells.
        """
        a, b = self._coefficients
        mass = a[cell] + b[cell] * r**3
        return -mass / (FOUR_PI * r**2)


def gauss_solve(rho: RadialField) -> GaussField:
    """
    Enclosed mass at the edges and h'(r) = -M(r) / (4 pi r^2), with h'(0) = 0.
    """
    mass = np.concatenate(([0.0], np.cumsum(rho.cell_masses)))
    h_prime = np.zeros_like(mass)
    h_prime[1:] = -mass[1:] / (FOUR_PI * rho.r_edges[1:] ** 2)
    return GaussField(r_edges=rho.r_edges, rho=rho.rho, enclosed_mass=mass, h_prime=h_prime)


def default_radius(rho0: InitialDensity, T: float) -> float:
    """
    Outer wall r_cloud + 8 sqrt(2T), far enough that heat flow leaks no measurable mass.
    """
    return rho0.support_radius + 8.0 * math.sqrt(2.0 * max(T, 0.0))


def initial_field(rho0: InitialDensity, cells: int, radius: float, mass: float = 1.0) -> RadialField:
    """
    Cell averages of rho_0 from the exact enclosed mass, renormalized to the requested total mass.
    """
    if cells < 2:
        raise ValidationError(f"radial grid needs at least two cells, got {cells}")
    if not radius > 0.0:
        raise ValidationError(f"outer radius must be positive, got {radius}")
    edges = np.linspace(0.0, radius, cells + 1)
    tail = rho0.tail_mass(edges)
    cell_mass = np.clip(tail[:-1] - tail[1:], 0.0, None)
    cell_mass *= mass / cell_mass.sum()
    volumes = FOUR_PI * np.diff(edges**3) / 3.0
    return RadialField(edges, cell_mass / volumes, 0.0)


def _edge_terms(rho: RadialField, interaction: bool):
    """
    Interior edge areas, centre spacings and outward advection speeds u = -h' >= 0.
    """
    areas = FOUR_PI * rho.r_edges[1:-1] ** 2
    spacing = np.diff(rho.centers)
    if interaction:
        speed = -gauss_solve(rho).h_prime[1:-1]
    else:
        speed = np.zeros_like(areas)
    return areas, spacing, speed


def _divergence(rho: RadialField, edge_flux: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """
    (1/V_i)(A_{i+1} J_{i+1} - A_i J_i) with zero flux through r = 0 and r = R.
    """
    flow = np.zeros(rho.cells + 1)
    flow[1:-1] = areas * edge_flux
    return np.diff(flow) / rho.cell_volumes


def stable_dt(rho: RadialField, cfl: Optional[float] = None, interaction: bool = True) -> float:
    """
    Largest admissible step: cfl * min(dr^2 / 6, dr / max|h'|), capped by the positivity bound
    0.9 / max_i (outflow coefficient of cell i).
    """
    cfl = AppConfig.SOLVER.CFL if cfl is None else cfl
    dr = float(np.min(np.diff(rho.r_edges)))
    areas, spacing, speed = _edge_terms(rho, interaction)
    vmax = float(np.max(speed, initial=0.0))
    limit = dr * dr / 6.0
    if vmax > 0.0:
        limit = min(limit, dr / vmax)
    cfl_dt = cfl * limit

    outflow = np.zeros(rho.cells)
    outflow[:-1] += areas * (1.0 / spacing + speed)
    outflow[1:] += areas / spacing
    positivity_dt = 0.9 / float(np.max(outflow / rho.cell_volumes))
    return min(cfl_dt, positivity_dt)


def fp_step(rho: RadialField, dt: float, interaction: bool = True, cfl: Optional[float] = None,
            check: bool = True) -> RadialField:
    """
    One explicit conservative step with flux J = -d rho/dr - rho h' (upwinded from the inner cell).

    Raises:
        SolverError: dt exceeds stable_dt
    """
    if check:
        limit = stable_dt(rho, cfl, interaction)
        if dt > limit * (1.0 + 1e-12):
            raise SolverError(
                f"time step {dt:.3g} violates the CFL/positivity limit {limit:.3g}",
                details={"dt": dt, "limit": limit, "t": rho.t}
            )
    areas, spacing, speed = _edge_terms(rho, interaction)
    flux = -(rho.rho[1:] - rho.rho[:-1]) / spacing + speed * rho.rho[:-1]
    updated = rho.rho - dt * _divergence(rho, flux, areas)
    return rho.with_rho(updated, rho.t + dt)


def interaction_divergence(rho: RadialField) -> np.ndarray:
    """
    Discrete div(rho grad h) with the scheme's upwinding, per cell.
    """
    areas, _, speed = _edge_terms(rho, True)
    return _divergence(rho, -speed * rho.rho[:-1], areas)


@dataclass
class RadialSeries:
    """
    Density snapshots at output times on a fixed grid.
    """

    r_edges: np.ndarray
    times: np.ndarray
    rho: np.ndarray
    dt: float
    n_steps: int
    interaction: bool = True
    leakage: float = 0.0
    metadata: Dict[str, float] = field(default_factory=dict)

    def at(self, k: int) -> RadialField:
        return RadialField(self.r_edges, self.rho[k], float(self.times[k]))

    @property
    def final(self) -> RadialField:
        return self.at(len(self.times) - 1)

    def masses(self) -> np.ndarray:
        volumes = FOUR_PI * np.diff(self.r_edges**3) / 3.0
        return self.rho @ volumes


def solve(rho0: InitialDensity, T: float, cells: Optional[int] = None, radius: Optional[float] = None,
          output_times: int = 64, dt: Optional[float] = None, interaction: bool = True,
          mass: float = 1.0, cfl: Optional[float] = None) -> RadialSeries:
    """
    Integrate the radial equation to time T, storing the density at output_times + 1 times.

    Args:
        rho0: Radial initial density
        T: Final time
        cells: Number of radial cells (default PDE_DEFAULT_CELLS)
        radius: Outer wall (default r_cloud + 8 sqrt(2T))
        output_times: Output intervals on [0, T]
        dt: Fixed time step; defaults to the stable step of the initial field
        interaction: False drops the Coulomb drift (pure heat flow)
        mass: Total initial mass
        cfl: CFL factor override

    Raises:
        SolverError: CFL violation or blow-up monitor trip
    """
    cells = cells or AppConfig.SOLVER.DEFAULT_CELLS
    radius = radius or default_radius(rho0, T)
    current = initial_field(rho0, cells, radius, mass)

    if dt is None:
        dt = 0.95 * stable_dt(current, cfl, interaction)
    n_steps = 0 if T <= 0.0 else int(math.ceil(T / dt - 1e-12))
    dt = T / n_steps if n_steps else dt

    outputs = output_steps(n_steps, output_times)
    out_index = {int(s): k for k, s in enumerate(outputs)}
    snapshots = np.empty((len(outputs), cells))
    ceiling = AppConfig.SOLVER.BLOWUP_FACTOR * float(current.rho.max())

    started = time.perf_counter()
    for s in range(n_steps + 1):
        k = out_index.get(s)
        if k is not None:
            snapshots[k] = current.rho
        if s == n_steps:
            break
        current = fp_step(current, dt, interaction=interaction, cfl=cfl)
        peak = float(current.rho.max())
        if not np.isfinite(peak) or peak > ceiling:
            raise SolverError(
                "blow-up monitor tripped: density grew past the sup-norm bound",
                details={"t": current.t, "max_rho": peak, "bound": ceiling}
            )

    # mass in the outer tenth of the domain flags a wall that is too close
    outer = current.r_edges[:-1] >= 0.9 * radius
    leakage = float(np.sum(current.cell_masses[outer]))
    if leakage > AppConfig.SOLVER.LEAKAGE_TOL:
        logger.warning("⚠️ radial solve: %.3g mass near the outer wall (R=%.3g)", leakage, radius)

    logger.info("radial solve: %d cells, %d steps of %.3g in %.2fs",
                cells, n_steps, dt, time.perf_counter() - started)
    return RadialSeries(
        r_edges=current.r_edges,
        times=outputs * dt,
        rho=snapshots,
        dt=dt,
        n_steps=n_steps,
        interaction=interaction,
        leakage=leakage,
        metadata={"radius": radius, "mass": mass},
    )


def _shell_integral(r: np.ndarray, s: np.ndarray, tau: float) -> np.ndarray:
    """
    Antiderivative in s of the radial heat kernel: the heat solution at r from unit density
    on [0, s] is G(r, s) - G(r, 0).
    """
    root = math.sqrt(tau)
    a = (s - r) / (2.0 * root)
    b = (s + r) / (2.0 * root)
    value = (-2.0 * tau * np.exp(-a * a) + r * math.sqrt(math.pi * tau) * erf(a)
             + 2.0 * tau * np.exp(-b * b) + r * math.sqrt(math.pi * tau) * erf(b))
    return value / (r * math.sqrt(4.0 * math.pi * tau))


def heat_weights(r_edges: np.ndarray, tau: float) -> np.ndarray:
    """
    Matrix W with (e^{tau Lap} rho)(c_i) = sum_j W_ij rho_j for piecewise-constant radial rho.
    """
    centers = 0.5 * (r_edges[1:] + r_edges[:-1])
    G = _shell_integral(centers[:, None], r_edges[None, :], tau)
    return np.diff(G, axis=1)


def heat_semigroup(rho: RadialField, tau: float) -> RadialField:
    """
    Exact heat-kernel propagation of cell data on R^3, sampled at the cell centres.
    """
    if tau < 0.0:
        raise ValidationError(f"heat time must be non-negative, got {tau}")
    if tau == 0.0:
        return rho.with_rho(rho.rho.copy())
    return rho.with_rho(heat_weights(rho.r_edges, tau) @ rho.rho, rho.t + tau)


def l1_distance(a: RadialField, b: RadialField) -> float:
    """
    int |a - b| over the shared grid.
    """
    if a.rho.shape != b.rho.shape:
        raise ValidationError("L1 distance needs fields on the same grid")
    return float(np.sum(a.cell_volumes * np.abs(a.rho - b.rho)))


def mild_residual(series: RadialSeries, index: Optional[int] = None,
                  heat: Callable[[RadialField, float], RadialField] = heat_semigroup) -> float:
    """
    L1 norm of rho(t) - [e^{t Lap} rho_0 + int_0^t e^{(t-s) Lap} div(rho grad h)(s) ds],
    time integral by the trapezoid rule on the stored outputs.
    """
    k = len(series.times) - 1 if index is None else index
    if k == 0:
        return 0.0
    t = float(series.times[k])
    start = series.at(0)
    mild = heat(start, t).rho

    if series.interaction:
        s = series.times[: k + 1]
        weights = np.zeros(k + 1)
        gaps = np.diff(s)
        weights[:-1] += 0.5 * gaps
        weights[1:] += 0.5 * gaps
        for j in range(k + 1):
            source = series.at(j)
            forcing = source.with_rho(interaction_divergence(source))
            mild = mild + weights[j] * heat(forcing, t - float(s[j])).rho

    current = series.at(k)
    return l1_distance(current, current.with_rho(mild))


def aggregate(rho: RadialField) -> RadialField:
    """
    Merge cells pairwise (mass-weighted) onto the grid with half as many cells.
    """
    if rho.cells % 2:
        raise ValidationError("pairwise aggregation needs an even number of cells")
    masses = rho.cell_masses.reshape(-1, 2).sum(axis=1)
    edges = rho.r_edges[::2]
    volumes = FOUR_PI * np.diff(edges**3) / 3.0
    return RadialField(edges, masses / volumes, rho.t)


def richardson_order(rho0: InitialDensity, T: float, cells: Sequence[int] = (128, 256, 512),
                     radius: Optional[float] = None, interaction: bool = True) -> Dict[str, object]:
    """
    Observed self-convergence order from three grids M, 2M, 4M sharing the finest grid's time step.
    """
    cells = sorted(cells)
    if len(cells) != 3 or cells[1] != 2 * cells[0] or cells[2] != 2 * cells[1]:
        raise ValidationError("Richardson study needs grids M, 2M, 4M")
    radius = radius or default_radius(rho0, T)
    finest = initial_field(rho0, cells[2], radius)
    dt = 0.95 * stable_dt(finest, interaction=interaction)

    finals = [solve(rho0, T, cells=m, radius=radius, output_times=1, dt=dt, interaction=interaction).final
              for m in cells]
    coarse_gap = l1_distance(aggregate(finals[1]), finals[0])
    fine_gap = l1_distance(aggregate(finals[2]), finals[1])
    order = math.log2(coarse_gap / fine_gap) if fine_gap > 0.0 else float("inf")
    return {"cells": cells, "errors": [coarse_gap, fine_gap], "order": order, "dt": dt}


def dissipation_report(series: RadialSeries) -> List[Dict[str, float]]:
    """
    Discrete dH/dt and dE/dt at each output time against their dissipation identities

        dH/dt = -(I + int rho^2),    dE/dt = -(int rho^2 + int rho |grad h|^2).
    """
    from app.services import stats

    fields = [series.at(k) for k in range(len(series.times))]
    entropy = np.array([stats.continuum_entropy(f) for f in fields])
    energy = np.array([stats.continuum_energy(f) for f in fields])
    times = series.times
    if len(times) < 3:
        raise ValidationError("dissipation report needs at least three output times")
    d_entropy = np.gradient(entropy, times)
    d_energy = np.gradient(energy, times)

    rows = []
    for k, f in enumerate(fields):
        fisher = stats.continuum_fisher(f)
        l2 = stats.l2_norm_sq(f)
        grad_h = gauss_solve(f).h_prime_at(f.centers, np.arange(f.cells))
        field_work = float(np.sum(f.cell_volumes * f.rho * grad_h**2))
        entropy_rate = -(fisher + l2)
        rows.append({
            "t": float(times[k]),
            "entropy": float(entropy[k]),
            "energy": float(energy[k]),
            "dH_dt": float(d_entropy[k]),
            "entropy_rate": entropy_rate,
            "entropy_identity_rel": abs(d_entropy[k] - entropy_rate) / abs(entropy_rate),
            "dE_dt": float(d_energy[k]),
            "energy_rate": -(l2 + field_work),
        })
    return rows
