"""
Experiment services, one per experiment kind. Each one simulates or solves what its config
describes and writes per-seed rows plus ensemble summaries through BaseExperiment.
"""

import math
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Type

import numpy as np

from app.schemas.experiment import EXPERIMENT_KINDS, PdeSettings
from app.schemas.results import EstimatorCalibration
from app.services import chaos, pde, stats, weakform
from app.services.base_service import BaseExperiment
from app.services.kernel import (
    KernelSpec,
    coulomb_force,
    force_bound_constant,
    mollified_force,
    mollifier_density,
)
from app.services.rng import AUXILIARY_STREAM, generator
from app.services.sde import (
    InitialDensity,
    RunSpec,
    Trajectory,
    coupled_refinement,
    free_diffusion_msd,
    max_stable_dt,
    output_steps,
    sample_initial,
    simulate,
    stopping_probability,
    stopping_time,
    strong_errors,
    strong_order,
)
from app.utils.exceptions import SingularityError, ValidationError

ENSEMBLE_COLUMNS = (
    "t", "seeds", "energy_mollified_mean", "energy_mollified_se", "balance_mean", "balance_se",
    "excess_mean", "excess_se", "entropy_mean", "entropy_se", "m2_mean", "moment_bound",
    "martingale_sq_mean", "martingale_sq_se", "martingale_sq_bound", "collision_mean",
)

PDE_DISSIPATION_COLUMNS = (
    "t", "entropy", "energy", "dH_dt", "entropy_rate", "entropy_identity_rel", "dE_dt", "energy_rate",
)

# closed-form calibration targets
GAUSSIAN_ENTROPY = -1.5 * math.log(2.0 * math.pi * math.e)


def mean_and_se(values) -> tuple:
    """
    Sample mean and standard error across seeds (SE is 0 for a single seed).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


class SimulateExperiment(BaseExperiment):
    """
    Particle ensembles over the (N, epsilon) ladder: per-seed diagnostics, snapshots and the
    ensemble energy / martingale / entropy summary.
    """

    kind = "simulate"

    def execute(self) -> Dict[str, Any]:
        summary: Dict[str, Any] = {"cells": []}
        for n in self.config.n_ladder:
            for eps in self.config.epsilon_ladder:
                trajectories = self.map_seeds(simulate, list(self.config.run_specs(n, eps)))
                for traj in trajectories:
                    self._write_seed(traj)
                rows = self._ensemble_rows(trajectories)
                self.write_table(f"ensemble_{self.tag(n, eps)}.csv", ENSEMBLE_COLUMNS, rows)
                summary["cells"].append({"N": n, "epsilon": eps, "steps": trajectories[0].n_steps})
                self.service_logger.log_rung(n, eps, seeds=len(trajectories), steps=trajectories[0].n_steps)
        return summary

    def _write_seed(self, traj: Trajectory):
        tag = self.tag(traj.n, traj.epsilon, traj.seed)
        self.write_diagnostics(f"diagnostics_{tag}.csv", traj.diagnostics)

        last = len(traj.times) - 1
        for k in output_steps(last, min(self.config.snapshot_times, max(last, 1))):
            self.save_snapshot(f"snapshot_{tag}_k{int(k):03d}.npy", traj.positions[k])

        self.append_record("martingale.jsonl", {
            "N": traj.n,
            "epsilon": traj.epsilon,
            "seed": traj.seed,
            "t": float(traj.times[-1]),
            "martingale": float(traj.martingale[-1]),
            "work": float(traj.work[-1]),
            "collision": float(traj.collision[-1]),
            "steps": traj.n_steps,
        })

    @staticmethod
    def _column(trajectories: Sequence[Trajectory], name: str) -> np.ndarray:
        return np.array([[row[name] for row in traj.diagnostics] for traj in trajectories])

    def _ensemble_rows(self, trajectories: Sequence[Trajectory]) -> List[List[float]]:
        """
        Seed-order fold of the per-seed diagnostics into one row per output time.
        """
        energy = self._column(trajectories, "energy_mollified")
        work = self._column(trajectories, "work")
        entropy = self._column(trajectories, "entropy_est")
        m2 = self._column(trajectories, "m2")
        martingale = self._column(trajectories, "martingale")
        collision = np.array([traj.collision for traj in trajectories])
        n = trajectories[0].n
        times = trajectories[0].times

        m2_0 = float(m2[:, 0].mean())
        energy_0 = float(energy[:, 0].mean())
        rows = []
        for k, t in enumerate(times):
            e_mean, e_se = mean_and_se(energy[:, k])
            b_mean, b_se = mean_and_se(energy[:, k] + work[:, k])
            x_mean, x_se = mean_and_se(energy[:, k] + work[:, k] - energy[:, 0])
            h_mean, h_se = mean_and_se(entropy[:, k])
            q_mean, q_se = mean_and_se(martingale[:, k] ** 2)
            rows.append([
                float(t), len(trajectories), e_mean, e_se, b_mean, b_se, x_mean, x_se, h_mean, h_se,
                float(m2[:, k].mean()), stats.moment_bound(m2_0, energy_0, float(t)),
                q_mean, q_se, 8.0 * n * float(work[:, k].mean()), float(collision[:, k].mean()),
            ])
        return rows


class PdeSolveExperiment(BaseExperiment):
    """
    Radial reference solve with its conservation, positivity, dissipation and mild-solution checks.
    """

    kind = "pde_solve"

    def execute(self) -> Dict[str, Any]:
        settings = self.config.pde or PdeSettings()
        rho0 = self.config.initial_density()
        T = self.config.T
        radius = settings.radius or pde.default_radius(rho0, T)

        series = pde.solve(rho0, T, cells=settings.cells, radius=radius, output_times=settings.output_times,
                           interaction=settings.interaction, mass=settings.mass, cfl=settings.cfl)
        self._write_series("pde_series.csv", series)

        checks: Dict[str, Any] = {
            "cells": settings.cells,
            "radius": radius,
            "steps": series.n_steps,
            "dt": series.dt,
            "leakage": series.leakage,
        }
        masses = series.masses()
        checks["mass_drift"] = float(np.max(np.abs(masses - masses[0])) / masses[0])
        checks["min_rho"] = float(series.rho.min())

        if len(series.times) >= 3:
            rows = pde.dissipation_report(series)
            self.write_table("pde_dissipation.csv", PDE_DISSIPATION_COLUMNS,
                             ([row[c] for c in PDE_DISSIPATION_COLUMNS] for row in rows))
            interior = rows[1:-1] or rows
            checks["entropy_identity_max_rel"] = max(row["entropy_identity_rel"] for row in interior)
            checks["max_dE_dt"] = max(row["dE_dt"] for row in rows)

        checks["heat_limit_l1"] = self._heat_limit(rho0, T, settings.cells, radius)
        checks["small_mass_l1"] = self._small_mass_gap(rho0, T, settings, radius)
        checks["mild_residual"] = self._mild_residuals(series, rho0, T, settings, radius)

        if self._is_dyadic(settings.refinement):
            checks["richardson"] = pde.richardson_order(rho0, T, cells=settings.refinement, radius=radius,
                                                        interaction=settings.interaction)

        self.write_document("pde_summary.json", checks)
        self.logger.info(f"✅ Radial solve: mass drift {checks['mass_drift']:.3g}, "
                         f"heat-limit L1 {checks['heat_limit_l1']:.3g}")
        return checks

    def _write_series(self, name: str, series: pde.RadialSeries):
        centers = 0.5 * (series.r_edges[1:] + series.r_edges[:-1])
        header = ["t"] + [format(float(c), ".17g") for c in centers]
        rows = ([float(t)] + list(series.rho[k]) for k, t in enumerate(series.times))
        self.write_table(name, header, rows)

    @staticmethod
    def _heat_limit(rho0: InitialDensity, T: float, cells: int, radius: float) -> float:
        """
        L1 gap between the solver with the interaction off and the exact heat flow.
        """
        solved = pde.solve(rho0, T, cells=cells, radius=radius, output_times=1, interaction=False).final
        exact = pde.heat_semigroup(pde.initial_field(rho0, cells, radius), T)
        return pde.l1_distance(solved, exact)

    @staticmethod
    def _small_mass_gap(rho0: InitialDensity, T: float, settings: PdeSettings, radius: float) -> float:
        """
        With total mass 1e-6 the interaction is negligible: the normalized solution should match
        the heat-only solve on the same grid.
        """
        mass = 1e-6
        weak = pde.solve(rho0, T, cells=settings.cells, radius=radius, output_times=1, mass=mass).final
        heat = pde.solve(rho0, T, cells=settings.cells, radius=radius, output_times=1, interaction=False).final
        return pde.l1_distance(weak.with_rho(weak.rho / mass), heat)

    def _mild_residuals(self, series: pde.RadialSeries, rho0: InitialDensity, T: float,
                        settings: PdeSettings, radius: float) -> Dict[str, float]:
        residuals = {str(settings.cells): pde.mild_residual(series)}
        for cells in sorted(set(settings.refinement) - {settings.cells}):
            coarse = pde.solve(rho0, T, cells=cells, radius=radius, output_times=settings.output_times,
                               interaction=settings.interaction, mass=settings.mass, cfl=settings.cfl)
            residuals[str(cells)] = pde.mild_residual(coarse)
        return dict(sorted(residuals.items(), key=lambda item: int(item[0])))

    @staticmethod
    def _is_dyadic(cells: Sequence[int]) -> bool:
        cells = sorted(cells)
        return len(cells) == 3 and cells[1] == 2 * cells[0] and cells[2] == 2 * cells[1]


class WeakformScan(BaseExperiment):
    """
    Weak-form residuals of the empirical measure over the (N, epsilon) ladder for a battery of
    test functions, plus the constant / linear sanity cases.
    """

    kind = "weakform_scan"

    def test_functions(self) -> List[weakform.TestFunction]:
        settings = self.config.test_functions
        battery = weakform.test_battery(settings.center_scale, settings.widths, settings.kind, settings.centers)
        return battery + [weakform.TestFunction("constant"), weakform.TestFunction("linear")]

    def execute(self) -> Dict[str, Any]:
        phis = self.test_functions()
        bumps = [phi.label for phi in phis if phi.kind not in ("constant", "linear")]
        summary_rows = []
        medians: Dict[float, Dict[int, Dict[str, float]]] = {}

        for n in self.config.n_ladder:
            for eps in self.config.epsilon_ladder:
                spec = KernelSpec(eps)
                runs = [replace(run, retain_increments=True) for run in self.config.run_specs(n, eps)]
                reports = []
                for traj in self.map_seeds(simulate, runs):
                    for phi in phis:
                        report = self._residual(traj, phi, spec)
                        self.append_record("weak_residuals.jsonl", report.model_dump())
                        reports.append(report)

                bump_reports = [r for r in reports if r.phi in bumps]
                cell = {
                    "value": float(np.median([abs(r.value) for r in bump_reports])),
                    "gap": _median_abs([r.mollification_gap_part for r in bump_reports]),
                }
                medians.setdefault(eps, {})[n] = cell
                for label in [phi.label for phi in phis]:
                    rows = [r for r in reports if r.phi == label]
                    summary_rows.append([
                        n, eps, label,
                        float(np.median([abs(r.value) for r in rows])),
                        _median_abs([r.exact_value for r in rows]),
                        _median_abs([r.mollification_gap_part for r in rows]),
                        _median_abs([r.ito_martingale_part for r in rows]),
                        _max_abs([r.remainder_part for r in rows]),
                    ])
                self.logger.info(f"✅ Weak residuals N={n} eps={eps:g}: median |K| {cell['value']:.4g}")

        self.write_table("weakform_summary.csv",
                         ("N", "epsilon", "phi", "median_abs_value", "median_abs_exact", "median_abs_gap",
                          "median_abs_ito", "max_abs_remainder"),
                         summary_rows)

        constant = [r[3] for r in summary_rows if r[2].startswith("constant")]
        linear = [r[7] for r in summary_rows if r[2] == "linear"]
        scaling = {
            "n_slope": self._n_slopes(medians),
            "gap_by_epsilon": self._gap_trend(medians),
            "constant_max_abs": max(constant) if constant else None,
            "linear_max_abs_remainder": max(linear) if linear else None,
        }
        self.write_document("weakform_scaling.json", scaling)
        return scaling

    def _residual(self, traj: Trajectory, phi: weakform.TestFunction, spec: KernelSpec):
        try:
            return weakform.weak_residual(traj, phi, spec)
        except SingularityError as e:
            self.logger.warning(f"⚠️ Exact residual unavailable for seed {traj.seed}: {e.message}")
            report = weakform.weak_residual(traj, phi, spec, decompose=False)
            ito = 0.0 if phi.kind == "constant" else weakform.ito_part(traj, phi, len(traj.times) - 1)
            report.ito_martingale_part = ito
            report.remainder_part = report.value - ito
            return report

    @staticmethod
    def _n_slopes(medians: Dict[float, Dict[int, Dict[str, float]]]) -> Dict[str, Optional[float]]:
        """
        Least-squares slope of log median |K| against log N, per epsilon.
        """
        slopes: Dict[str, Optional[float]] = {}
        for eps, by_n in medians.items():
            ns = sorted(by_n)
            values = [by_n[n]["value"] for n in ns]
            if len(ns) < 2 or min(values) <= 0.0:
                slopes[format(eps, "g")] = None
                continue
            slope, _ = np.polyfit(np.log(ns), np.log(values), 1)
            slopes[format(eps, "g")] = float(slope)
        return slopes

    @staticmethod
    def _gap_trend(medians: Dict[float, Dict[int, Dict[str, float]]]) -> Dict[str, Dict[str, float]]:
        """
        Median |K_psi - K_psi_eps| per N, keyed by epsilon in decreasing order.
        """
        trend: Dict[str, Dict[str, float]] = {}
        for eps in sorted(medians, reverse=True):
            for n, cell in medians[eps].items():
                trend.setdefault(str(n), {})[format(eps, "g")] = cell["gap"]
        return trend


def _median_abs(values) -> Optional[float]:
    present = [abs(v) for v in values if v is not None]
    return float(np.median(present)) if present else None


def _max_abs(values) -> Optional[float]:
    present = [abs(v) for v in values if v is not None]
    return float(max(present)) if present else None


def _terminal_cloud(run: RunSpec, t: float) -> np.ndarray:
    traj = simulate(run)
    return traj.positions[traj.index_of(t)]


class ChaosScan(BaseExperiment):
    """
    Distance of the empirical marginal to the radial PDE solution and pair correlations across
    the N ladder.
    """

    kind = "chaos_scan"

    def execute(self) -> Dict[str, Any]:
        settings = self.config.pde or PdeSettings()
        t = self.config.chaos.t if self.config.chaos.t is not None else self.config.T
        if t > self.config.T:
            raise ValidationError(f"chaos evaluation time {t} lies beyond T={self.config.T}")

        rho0 = self.config.initial_density()
        reference = pde.solve(rho0, t, cells=settings.cells, radius=settings.radius, output_times=1).final
        ts = self.config.test_functions
        phis = weakform.test_battery(ts.center_scale, ts.widths, ts.kind, ts.centers)

        rows = []
        for eps in self.config.epsilon_ladder:
            for n in self.config.n_ladder:
                runs = [replace(run, retain_increments=False, with_entropy=False, with_fisher=False)
                        for run in self.config.run_specs(n, eps)]
                clouds = np.array(self.map_seeds(_ChaosWorker(t), runs))
                report = chaos.chaos_report(clouds, reference, phis, t, eps, self.config.seeds,
                                            directions=self.config.chaos.directions)
                self.append_record("chaos.jsonl", report.model_dump())
                cov = [abs(v) for v in report.pair_cov.values()]
                rows.append([
                    n, eps, t, report.radial_ks, report.sliced_w1,
                    float(np.median(cov)) if cov else float("nan"), 1.63 / math.sqrt(n),
                ])
                self.logger.info(f"✅ Chaos N={n} eps={eps:g}: KS {report.radial_ks:.4g}, W1 {report.sliced_w1:.4g}")
                self.service_logger.log_rung(n, eps, t=t, radial_ks=report.radial_ks, sliced_w1=report.sliced_w1)

        self.write_table("chaos_summary.csv",
                         ("N", "epsilon", "t", "radial_ks", "sliced_w1", "median_abs_pair_cov", "dkw_bound"),
                         rows)
        return {"rows": len(rows), "t": t}


class _ChaosWorker:
    """
    Picklable callable returning one seed's positions at time t.
    """

    def __init__(self, t: float):
        self.t = t

    def __call__(self, run: RunSpec) -> np.ndarray:
        return _terminal_cloud(run, self.t)


def _first_contact(run: RunSpec) -> Optional[float]:
    return stopping_time(simulate(run), run.epsilon)


class NoncollisionScan(BaseExperiment):
    """
    P(tau_eps <= T) over the epsilon ladder, with tau_eps the first output time at which
    two particles are within epsilon.
    """

    kind = "noncollision_scan"

    def execute(self) -> Dict[str, Any]:
        rows = []
        for n in self.config.n_ladder:
            for eps in sorted(self.config.epsilon_ladder, reverse=True):
                runs = [replace(run, retain_increments=False, with_entropy=False, with_fisher=False)
                        for run in self.config.run_specs(n, eps)]
                taus = self.map_seeds(_first_contact, runs)
                for seed, tau in zip(self.config.seeds, taus):
                    self.append_record("stopping_times.jsonl",
                                       {"N": n, "epsilon": eps, "seed": seed, "tau": tau, "T": self.config.T})
                p, se = stopping_probability(taus)
                hits = sum(1 for tau in taus if tau is not None)
                rows.append([n, eps, p, se, hits, len(taus)])
                self.logger.info(f"✅ Stopping N={n} eps={eps:g}: P(tau <= T) = {p:.3g} +/- {se:.2g}")

        self.write_table("noncollision_summary.csv", ("N", "epsilon", "p_hat", "se", "hits", "seeds"), rows)
        return {"rows": len(rows)}


class CalibrateEstimators(BaseExperiment):
    """
    Kernel identities, integrator calibration and estimator calibration on closed-form targets.
    """

    kind = "calibrate_estimators"

    def execute(self) -> Dict[str, Any]:
        seed = self.config.seeds[0]
        kernel = self.kernel_identities(seed=seed)
        self.write_document("kernel_checks.json", kernel)

        integrator = self.integrator_calibration(seed=seed)
        self.write_document("sde_calibration.json", integrator)

        results = self.estimator_calibration(self.config.calibration.samples, seed=seed)
        for result in results:
            self.append_record("calibration.jsonl", result.model_dump())
        self.write_table(
            "calibration.csv",
            ("estimator", "target", "n_samples", "estimate", "expected", "tolerance", "relative", "passed"),
            ([r.estimator, r.target, r.n_samples, r.estimate, r.expected, r.tolerance, int(r.relative),
              int(r.passed)] for r in results),
        )
        failed = [f"{r.estimator}/{r.target}" for r in results if not r.passed]
        if failed:
            self.logger.warning(f"⚠️ Calibration outside tolerance: {', '.join(failed)}")
        return {"kernel": kernel, "integrator": integrator, "failed": failed}

    @staticmethod
    def kernel_identities(samples: int = 10_000, seed: int = 0) -> Dict[str, float]:
        """
        Worst violations of the kernel identities over random (x, epsilon) pairs.
        """
        gen = generator(seed, AUXILIARY_STREAM, step=7)
        eps = gen.uniform(1e-3, 1.0, samples)
        directions = gen.standard_normal((samples, 3))
        directions /= np.linalg.norm(directions, axis=1)[:, None]
        s = gen.uniform(0.0, 2.0, samples)
        x = (s * eps)[:, None] * directions
        c = force_bound_constant()

        origin_max = 0.0
        outer_gap = 0.0
        bound_excess = -np.inf
        divergence_rel = 0.0
        for xi, e, si in zip(x, eps, s):
            spec = KernelSpec(float(e))
            origin_max = max(origin_max, float(np.max(np.abs(mollified_force(np.zeros(3), spec)))))
            if np.all(xi == 0.0):
                continue
            f_eps = mollified_force(xi, spec)
            f = coulomb_force(xi)
            r = float(np.linalg.norm(xi))
            if r >= e:
                outer_gap = max(outer_gap, float(np.max(np.abs(f_eps - f))))
            bound = min(c * r / e**3, float(np.linalg.norm(f)))
            bound_excess = max(bound_excess, float(np.linalg.norm(f_eps)) - bound)
            if si < 0.9:
                h = 1e-4 * e
                div = sum(
                    (mollified_force(xi + h * unit, spec)[a] - mollified_force(xi - h * unit, spec)[a]) / (2 * h)
                    for a, unit in enumerate(np.eye(3))
                )
                j = float(mollifier_density(xi, spec))
                divergence_rel = max(divergence_rel, abs(float(div) - j) / j)

        return {
            "samples": samples,
            "origin_max_abs": origin_max,
            "outer_max_abs_gap": outer_gap,
            "bound_max_excess": float(bound_excess),
            "divergence_max_rel": divergence_rel,
        }

    @staticmethod
    def integrator_calibration(paths: int = 10_000, t: float = 0.25, seed: int = 0) -> Dict[str, float]:
        """
        Free-diffusion mean squared displacement and the coupled strong order of the interacting step.
        """
        msd, msd_se = free_diffusion_msd(paths, t, dt=t / 64, seed=seed)

        eps = 0.2
        spec = KernelSpec(eps)
        dt = max_stable_dt(eps)
        levels = 4
        ens = sample_initial(InitialDensity.gaussian(1.0), 64, seed)
        terminals = coupled_refinement(ens, spec, dt, 8 * dt, levels)
        errors = strong_errors(terminals)
        dts = [dt / 2**level for level in range(levels)]
        return {
            "paths": paths,
            "t": t,
            "msd": msd,
            "msd_se": msd_se,
            "msd_expected": 6.0 * t,
            "strong_errors": [float(e) for e in errors],
            "strong_dts": dts,
            "strong_order": strong_order(errors, dts),
        }

    @staticmethod
    def estimator_calibration(samples: int, seed: int = 0) -> List[EstimatorCalibration]:
        gen = generator(seed, AUXILIARY_STREAM, step=11)
        gaussian = gen.standard_normal((samples, 3))
        cube = gen.random((samples, 3))
        return [
            EstimatorCalibration(estimator="entropy_knn", target="gaussian(1)", n_samples=samples,
                                 estimate=stats.entropy_knn(gaussian), expected=GAUSSIAN_ENTROPY,
                                 tolerance=0.02),
            EstimatorCalibration(estimator="entropy_knn", target="uniform_cube", n_samples=samples,
                                 estimate=stats.entropy_knn(cube), expected=0.0, tolerance=0.05,
                                 relative=False),
            EstimatorCalibration(estimator="fisher_kde", target="gaussian(1)", n_samples=samples,
                                 estimate=stats.fisher_kde(gaussian), expected=3.0, tolerance=0.10),
            EstimatorCalibration(estimator="second_moment", target="gaussian(1)", n_samples=samples,
                                 estimate=stats.second_moment(gaussian), expected=3.0, tolerance=0.02),
        ]


EXPERIMENTS: Dict[str, Type[BaseExperiment]] = {
    cls.kind: cls
    for cls in (SimulateExperiment, PdeSolveExperiment, WeakformScan, ChaosScan, NoncollisionScan,
                CalibrateEstimators)
}


def create_experiment(config, workers: Optional[int] = None) -> BaseExperiment:
    """
    Service instance for the config's experiment kind.
    """
    try:
        cls = EXPERIMENTS[config.kind]
    except KeyError:
        raise ValidationError(f"Unknown experiment kind {config.kind!r}",
                              details={"expected": list(EXPERIMENT_KINDS)})
    return cls(config, workers=workers)
