"""
Euler-Maruyama integration of the regularized N-particle system

    dX_i = (1/N) sum_{j != i} F_eps(X_i - X_j) dt + sqrt(2) dB_i,

initial sampling from radial densities and collision / stopping-time monitoring.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf, erfc

from app.config import AppConfig
from app.services import stats
from app.services.kernel import KernelSpec, pairwise_forces
from app.services.rng import CounterStreams
from app.utils.exceptions import StepSizeError, ValidationError
from app.utils.validators import (
    radial_table_segments,
    shell_segment_mass,
    validate_positions,
    validate_radial_table,
)

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
DENSITY_KINDS = ("gaussian", "uniform_ball", "radial_table")


def max_stable_dt(epsilon: float, cap_fraction: Optional[float] = None) -> float:
    """
    Largest dt for which a particle moving at 1 / (4 pi eps^2) travels at most cap_fraction * eps
    per step; pi * eps^3 for the default cap of eps / 4.
    """
    cap = AppConfig.SIMULATION.DRIFT_CAP_FRACTION if cap_fraction is None else cap_fraction
    return 4.0 * math.pi * cap * epsilon**3


@dataclass(frozen=True)
class InitialDensity:
    """
    Radial initial density rho_0: gaussian(sigma), uniform_ball(radius) or a tabulated radial profile
    (piecewise linear in r between the table nodes).
    """

    kind: str
    sigma: float = 1.0
    radius: float = 1.0
    table_r: Tuple[float, ...] = ()
    table_rho: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise ValidationError(f"Unknown initial density kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0.0:
            raise ValidationError(f"gaussian sigma must be positive, got {self.sigma}")
        if self.kind == "uniform_ball" and not self.radius > 0.0:
            raise ValidationError(f"uniform_ball radius must be positive, got {self.radius}")
        if self.kind == "radial_table":
            validate_radial_table(self.table_r, self.table_rho)

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "InitialDensity":
        return cls("gaussian", sigma=sigma)

    @classmethod
    def uniform_ball(cls, radius: float = 1.0) -> "InitialDensity":
        return cls("uniform_ball", radius=radius)

    @classmethod
    def radial_table(cls, radii: Sequence[float], density: Sequence[float]) -> "InitialDensity":
        return cls("radial_table", table_r=tuple(float(r) for r in radii),
                   table_rho=tuple(float(v) for v in density))

    @property
    def support_radius(self) -> float:
        """
        Radius holding essentially all the mass (6 sigma for gaussians).
        """
        if self.kind == "gaussian":
            return 6.0 * self.sigma
        if self.kind == "uniform_ball":
            return self.radius
        return self.table_r[-1]

    def density(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "gaussian":
            s2 = self.sigma**2
            return np.exp(-0.5 * r * r / s2) / (2.0 * np.pi * s2) ** 1.5
        if self.kind == "uniform_ball":
            return np.where(r <= self.radius, 3.0 / (4.0 * np.pi * self.radius**3), 0.0)
        return np.interp(r, self.table_r, self.table_rho, right=0.0)

    def tail_mass(self, r) -> np.ndarray:
        """
        Mass outside radius r, computed without cancellation far out.
        """
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "gaussian":
            u = r / self.sigma
            return erfc(u / SQRT2) + np.sqrt(2.0 / np.pi) * u * np.exp(-0.5 * u * u)
        return 1.0 - self.enclosed_mass(r)

    def enclosed_mass(self, r) -> np.ndarray:
        """
        Mass inside radius r.
        """
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "gaussian":
            u = r / self.sigma
            return erf(u / SQRT2) - np.sqrt(2.0 / np.pi) * u * np.exp(-0.5 * u * u)
        if self.kind == "uniform_ball":
            return np.minimum(r / self.radius, 1.0) ** 3
        return self._table_mass(r)

    def _table_mass(self, r: np.ndarray) -> np.ndarray:
        nodes = np.asarray(self.table_r)
        offset, slope, cumulative = radial_table_segments(nodes, self.table_rho)
        total = cumulative[-1]
        rc = np.clip(r, 0.0, nodes[-1])
        idx = np.clip(np.searchsorted(nodes, rc, side="right") - 1, 0, nodes.size - 2)
        partial = cumulative[idx] + shell_segment_mass(nodes[idx], rc, offset[idx], slope[idx])
        return partial / total

    def second_moment(self) -> float:
        if self.kind == "gaussian":
            return 3.0 * self.sigma**2
        if self.kind == "uniform_ball":
            return 0.6 * self.radius**2
        a, b = np.asarray(self.table_r[:-1]), np.asarray(self.table_r[1:])
        offset, slope, cumulative = radial_table_segments(self.table_r, self.table_rho)
        moment = 4.0 * np.pi * (offset * (b**5 - a**5) / 5.0 + slope * (b**6 - a**6) / 6.0)
        return float(moment.sum() / cumulative[-1])

    def sample(self, n: int, seed: int) -> np.ndarray:
        """
        n i.i.d. draws, deterministic in seed.
        """
        if n < 1:
            raise ValidationError(f"need at least one particle, got {n}")
        normals, uniforms = CounterStreams(seed).initial(n)
        if self.kind == "gaussian":
            return self.sigma * normals

        directions = normals / np.linalg.norm(normals, axis=1)[:, None]
        if self.kind == "uniform_ball":
            radii = self.radius * np.cbrt(uniforms)
        else:
            grid = np.linspace(0.0, self.table_r[-1], 64 * len(self.table_r) + 1)
            mass = self.enclosed_mass(grid)
            radii = np.interp(uniforms, mass, grid)
        return radii[:, None] * directions

    def describe(self) -> Dict[str, object]:
        if self.kind == "gaussian":
            return {"kind": self.kind, "sigma": self.sigma}
        if self.kind == "uniform_ball":
            return {"kind": self.kind, "radius": self.radius}
        return {"kind": self.kind, "points": len(self.table_r)}


@dataclass
class ParticleEnsemble:
    """
    Particle positions with elapsed time, seed, step counter and per-particle noise labels.
    """

    positions: np.ndarray
    t: float = 0.0
    seed: int = 0
    step: int = 0
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = validate_positions(self.positions)
        if self.labels is None:
            self.labels = np.arange(self.positions.shape[0])
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.positions.shape[0],):
            raise ValidationError("one noise label per particle is required")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def streams(self) -> CounterStreams:
        return CounterStreams(self.seed)

    def permuted(self, order: np.ndarray) -> "ParticleEnsemble":
        """
        Relabeled copy carrying each particle's noise stream along.
        """
        order = np.asarray(order)
        return replace(self, positions=self.positions[order].copy(), labels=self.labels[order].copy())


@dataclass(frozen=True)
class StepPolicy:
    dt: float
    scheme: str = "euler_maruyama"
    drift_cap_check: bool = True
    noise: bool = True
    cap_fraction: float = field(default_factory=lambda: AppConfig.SIMULATION.DRIFT_CAP_FRACTION)

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValidationError(f"dt must be a positive finite time, got {self.dt}")
        if self.scheme != "euler_maruyama":
            raise ValidationError(f"Unknown scheme {self.scheme!r}")


def sample_initial(rho0: InitialDensity, n: int, seed: int) -> ParticleEnsemble:
    """
    N i.i.d. draws from rho_0 as a fresh ensemble at t = 0.
    """
    return ParticleEnsemble(rho0.sample(n, seed), t=0.0, seed=seed)


def _advance(ens: ParticleEnsemble, spec: KernelSpec, policy: StepPolicy, drift: np.ndarray,
             increments: Optional[np.ndarray] = None) -> Tuple[ParticleEnsemble, np.ndarray]:
    """
    One Euler-Maruyama step from a precomputed drift. Returns the new ensemble and the Brownian increment used.
    """
    dt = policy.dt
    if policy.drift_cap_check and ens.n > 1:
        reach = dt * float(np.max(np.linalg.norm(drift, axis=1)))
        limit = policy.cap_fraction * spec.epsilon
        if reach > limit:
            raise StepSizeError(
                f"drift moves a particle {reach:.3g} in one step, above the cap {limit:.3g}; reduce dt",
                details={"dt": dt, "epsilon": spec.epsilon, "step": ens.step, "t": ens.t}
            )

    if increments is None:
        increments = ens.streams.brownian_increment(ens.labels, ens.step, dt)
    if not policy.noise:
        increments = np.zeros_like(ens.positions)

    positions = ens.positions + drift * dt + SQRT2 * increments
    moved = replace(ens, positions=positions, t=ens.t + dt, step=ens.step + 1)
    return moved, increments


def step(ens: ParticleEnsemble, spec: KernelSpec, policy: StepPolicy, increments: Optional[np.ndarray] = None,
         method: str = "direct", theta: Optional[float] = None) -> ParticleEnsemble:
    """
    X <- X + drift dt + sqrt(2) dB with dB drawn from the ensemble's counter streams (or given).

    Raises:
        StepSizeError: dt * max |drift| exceeds cap_fraction * epsilon
    """
    drift = pairwise_forces(ens.positions, spec, method=method, theta=theta)
    moved, _ = _advance(ens, spec, policy, drift, increments)
    return moved


@dataclass
class RunSpec:
    """
    One seed's fully resolved simulation settings.
    """

    n_particles: int
    epsilon: float
    T: float
    rho0: InitialDensity
    seed: int
    dt: Optional[float] = None
    output_times: Optional[int] = None
    method: str = "direct"
    theta: Optional[float] = None
    retain_increments: bool = True
    drift_cap_check: bool = True
    noise: bool = True
    with_entropy: bool = True
    with_fisher: Optional[bool] = None
    knn_k: Optional[int] = None

    def resolved_dt(self) -> float:
        return self.dt if self.dt is not None else max_stable_dt(self.epsilon)


@dataclass
class Trajectory:
    """
    Positions, drifts and running integrals at the output times of one simulated path.

    increments[k] is the sum of the Brownian increments over (times[k], times[k+1]];
    work and collision are running trapezoid integrals of the work rate and the collision rate.
    """

    times: np.ndarray
    positions: np.ndarray
    drifts: np.ndarray
    martingale: np.ndarray
    work: np.ndarray
    collision: np.ndarray
    epsilon: float
    seed: int
    dt: float
    n_steps: int
    increments: Optional[np.ndarray] = None
    diagnostics: List[Dict[str, float]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def index_of(self, t: float) -> int:
        """
        Output index whose time matches t to rounding.
        """
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValidationError(
                f"time {t} is not a stored output time",
                details={"available": [float(x) for x in self.times]}
            )
        return idx


def output_steps(n_steps: int, output_times: int) -> np.ndarray:
    """
    Step indices of the output grid: round(linspace(0, n_steps, output_times + 1)), deduplicated.
    """
    return np.unique(np.round(np.linspace(0, n_steps, output_times + 1)).astype(np.int64))


def simulate(run: RunSpec) -> Trajectory:
    """
    Integrate one seed and record positions and diagnostics at the output times.

    Args:
        run: Resolved settings for one seed

    Returns:
        Trajectory with DiagnosticsRow records in column order

    Raises:
        StepSizeError: Propagated from step
    """
    spec = KernelSpec(run.epsilon)
    dt_target = run.resolved_dt()
    n_steps = 0 if run.T <= 0.0 else int(math.ceil(run.T / dt_target - 1e-12))
    dt = run.T / n_steps if n_steps else dt_target
    policy = StepPolicy(dt=dt, drift_cap_check=run.drift_cap_check, noise=run.noise)
    outputs = output_steps(n_steps, run.output_times or AppConfig.SIMULATION.OUTPUT_TIMES)
    out_set = {int(s): k for k, s in enumerate(outputs)}

    started = time.perf_counter()
    ens = sample_initial(run.rho0, run.n_particles, run.seed)
    n = ens.n
    k_out = len(outputs)

    times = outputs * dt
    positions = np.empty((k_out, n, 3))
    drifts = np.empty((k_out, n, 3))
    martingale = np.zeros(k_out)
    increments = np.zeros((max(k_out - 1, 0), n, 3)) if run.retain_increments else None
    rates = np.zeros(k_out)
    collision_rates = np.zeros(k_out)

    m_running = 0.0
    pending = np.zeros((n, 3))
    drift = pairwise_forces(ens.positions, spec, method=run.method, theta=run.theta)

    for s in range(n_steps + 1):
        k = out_set.get(s)
        if k is not None:
            positions[k] = ens.positions
            drifts[k] = drift
            martingale[k] = m_running
            rates[k] = float(np.mean(np.sum(drift * drift, axis=1)))
            collision_rates[k] = stats.collision_rate(ens.positions, spec)
            if k > 0 and increments is not None:
                increments[k - 1] = pending
                pending = np.zeros((n, 3))
            logger.debug("seed %d output %d/%d t=%.6g", run.seed, k, k_out - 1, ens.t)
        if s == n_steps:
            break

        ens, dB = _advance(ens, spec, policy, drift)
        m_running += 2.0 * SQRT2 * float(np.sum(drift * dB))
        if increments is not None:
            pending += dB
        drift = pairwise_forces(ens.positions, spec, method=run.method, theta=run.theta)

    work = _running_trapezoid(rates, times)
    collision = _running_trapezoid(collision_rates, times)

    trajectory = Trajectory(
        times=times, positions=positions, drifts=drifts, martingale=martingale,
        work=work, collision=collision, epsilon=run.epsilon, seed=run.seed,
        dt=dt, n_steps=n_steps, increments=increments,
    )
    for k in range(k_out):
        trajectory.diagnostics.append(stats.diagnostics_row(
            times[k], positions[k], spec, martingale[k], work[k],
            with_entropy=run.with_entropy, with_fisher=run.with_fisher, knn_k=run.knn_k,
        ))

    logger.info("simulated seed %d: N=%d eps=%g steps=%d in %.2fs",
                run.seed, n, run.epsilon, n_steps, time.perf_counter() - started)
    return trajectory


def _running_trapezoid(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    if values.size > 1:
        out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return out


def stopping_time(trajectory: Trajectory, eps_threshold: float) -> Optional[float]:
    """
    First output time with min pair distance <= eps_threshold, or None.
    """
    if trajectory.n < 2:
        return None
    for k, t in enumerate(trajectory.times):
        if stats.min_pair_distance(trajectory.positions[k]) <= eps_threshold:
            return float(t)
    return None


def stopping_probability(times: Sequence[Optional[float]]) -> Tuple[float, float]:
    """
    Estimate of P(tau <= T) over seeds and its binomial standard error.
    """
    if not times:
        raise ValidationError("no stopping times to aggregate")
    hits = sum(1 for t in times if t is not None)
    p = hits / len(times)
    return p, math.sqrt(p * (1.0 - p) / len(times))


def free_diffusion_msd(paths: int, t: float, dt: float, seed: int = 0) -> Tuple[float, float]:
    """
    Mean and standard error of |X_t - X_0|^2 over independent single-particle systems.

    With N = 1 the drift vanishes, so each label carries one independent path of the
    integrator's noise; the exact value is 2 d t = 6 t.
    """
    if paths < 2:
        raise ValidationError("diffusion calibration needs at least two paths")
    n_steps = max(1, int(math.ceil(t / dt - 1e-12)))
    dt = t / n_steps
    streams = CounterStreams(seed)
    labels = np.arange(paths)
    displacement = np.zeros((paths, 3))
    for s in range(n_steps):
        displacement += SQRT2 * streams.brownian_increment(labels, s, dt)
    sq = np.sum(displacement * displacement, axis=1)
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(paths))


def coupled_refinement(ens: ParticleEnsemble, spec: KernelSpec, dt: float, T: float, levels: int,
                       method: str = "direct", drift_cap_check: bool = True) -> List[np.ndarray]:
    """
    Terminal positions for dt, dt/2, ..., dt/2^levels driven by one set of Brownian paths.

    The fine increments are addressed by fine step index; a coarse increment is the sum of the
    fine increments it spans.

    Returns:
        Terminal N x 3 positions, coarsest first
    """
    if levels < 1:
        raise ValidationError("coupled refinement needs at least one refinement level")
    fine_dt = dt / 2**levels
    n_fine = int(round(T / fine_dt))
    if n_fine % 2**levels:
        raise ValidationError("T must be a whole number of coarse steps")

    streams = ens.streams
    terminals = []
    for level in range(levels + 1):
        block = 2 ** (levels - level)
        policy = StepPolicy(dt=dt / 2**level, drift_cap_check=drift_cap_check)
        state = replace(ens, step=0)
        for c in range(n_fine // block):
            increment = sum(streams.brownian_increment(ens.labels, c * block + f, fine_dt)
                            for f in range(block))
            drift = pairwise_forces(state.positions, spec, method=method)
            state, _ = _advance(state, spec, policy, drift, increment)
        terminals.append(state.positions)
    return terminals


def strong_errors(terminals: Sequence[np.ndarray]) -> np.ndarray:
    """
    RMS distance of each level's terminal positions to the finest level.
    """
    finest = terminals[-1]
    return np.array([np.sqrt(np.mean(np.sum((x - finest) ** 2, axis=1))) for x in terminals[:-1]])


def strong_order(errors: Sequence[float], dts: Sequence[float]) -> float:
    """
    Least-squares slope of log error against log dt.
    """
    errors = np.asarray(errors, dtype=np.float64)
    dts = np.asarray(dts, dtype=np.float64)
    if errors.size < 2 or np.any(errors <= 0.0):
        raise ValidationError("strong order needs at least two positive errors")
    slope, _ = np.polyfit(np.log(dts), np.log(errors), 1)
    return float(slope)
