"""
Run orchestration: validate a config, execute its experiment with a manifest, and build
summary tables plus the acceptance table from a results directory.
"""

import json
import logging
import math
import re
import time
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from app.config import AppConfig
from app.schemas.experiment import ExperimentConfig, load_experiment_config
from app.schemas.results import DIAGNOSTICS_COLUMNS, AcceptanceRow, RunManifest
from app.services.base_service import MANIFEST_NAME
from app.services.experiments import create_experiment
from app.utils.exceptions import MeanFieldError, ValidationError, describe_error
from app.utils.persistence import read_csv, sha256_file, sha256_payload, write_csv, write_json

logger = logging.getLogger(__name__)

REPORT_DIR = "report"
DIAGNOSTICS_PATTERN = re.compile(r"^diagnostics_(N\d+_eps[^_]+)_seed(\d+)\.csv$")

ACCEPTANCE_TITLES = {
    1: "Kernel identities",
    2: "SDE calibration",
    3: "Energy balance",
    4: "Martingale second moment",
    5: "Entropy trend",
    6: "Estimator calibration",
    7: "Radial PDE solver",
    8: "Weak-form scaling",
    9: "Mollification-gap trend",
    10: "Non-collision trend",
    11: "Propagation of chaos trend",
}


def validate(config_path: Union[str, Path], out: Optional[str] = None, seed_offset: int = 0) -> ExperimentConfig:
    """
    Load and validate a config, applying the CLI overrides. Nothing is computed.

    Raises:
        ConfigurationError: Unreadable or malformed file
        pydantic.ValidationError: Schema violation
    """
    config = load_experiment_config(config_path)
    if seed_offset or out:
        config = config.with_overrides(seed_offset=seed_offset, output_dir=out)
    logger.info(f"✅ Config {config.name!r} valid: kind={config.kind} seeds={len(config.seeds)}")
    return config


def run(config_path: Union[str, Path], out: Optional[str] = None, workers: Optional[int] = None,
        seed_offset: int = 0) -> RunManifest:
    """
    Execute one experiment and write its manifest next to the data files.

    Args:
        config_path: Experiment config file
        out: Output directory override
        workers: Worker pool size
        seed_offset: Offset added to every configured seed

    Returns:
        The written manifest

    Raises:
        MeanFieldError: Any failure; a manifest with status "error" is written first when the
            output directory is reachable
    """
    config = validate(config_path, out=out, seed_offset=seed_offset)
    experiment = create_experiment(config, workers=workers)
    started_at = datetime.now(timezone.utc).isoformat()
    started = time.perf_counter()

    try:
        experiment.run()
    except (MeanFieldError, OSError) as e:
        manifest = _manifest(config, experiment, started_at, time.perf_counter() - started, error=e)
        try:
            _write_manifest(experiment.output_dir, manifest)
        except MeanFieldError:
            logger.error(f"❌ Could not write error manifest to {experiment.output_dir}")
        raise

    manifest = _manifest(config, experiment, started_at, time.perf_counter() - started)
    _write_manifest(experiment.output_dir, manifest)
    logger.info(f"✅ Run {config.name!r} finished in {manifest.wall_time_s:.2f}s, {len(manifest.files)} files")
    return manifest


def _manifest(config: ExperimentConfig, experiment, started_at: str, wall_time: float,
              error: Optional[BaseException] = None) -> RunManifest:
    files = {
        path.name: sha256_file(path)
        for path in sorted(experiment.files, key=lambda p: p.name)
        if path.exists()
    }
    return RunManifest(
        name=config.name,
        kind=config.kind,
        config_sha256=sha256_payload(config.canonical()),
        app_version=AppConfig.APP_VERSION,
        started_at=started_at,
        wall_time_s=wall_time,
        status="error" if error else "success",
        seeds=config.seeds,
        files=files,
        error=describe_error(error) if error else None,
    )


def _write_manifest(output_dir: Path, manifest: RunManifest) -> Path:
    return write_json(Path(output_dir) / MANIFEST_NAME, manifest.model_dump())


def load_manifests(results_dir: Union[str, Path]) -> List[Dict[str, Any]]:
    """
    Every run manifest under results_dir, each with the run directory attached as "dir".
    """
    manifests = []
    for path in sorted(Path(results_dir).rglob(MANIFEST_NAME)):
        record = json.loads(path.read_text(encoding="utf-8"))
        record["dir"] = path.parent
        manifests.append(record)
    return manifests


# --- report ------------------------------------------------------------------------------------

def summarize_diagnostics(run_dir: Path, out_dir: Path) -> List[Path]:
    """
    Fold the per-seed diagnostics of each (N, epsilon) rung into median and 5%-95% band columns.
    With one seed the bands collapse onto the point estimate.
    """
    groups: Dict[str, List[Path]] = defaultdict(list)
    for path in sorted(run_dir.glob("diagnostics_*.csv")):
        match = DIAGNOSTICS_PATTERN.match(path.name)
        if match:
            groups[match.group(1)].append(path)

    written = []
    for tag, paths in sorted(groups.items()):
        tables = [read_csv(p) for p in sorted(paths, key=lambda p: int(DIAGNOSTICS_PATTERN.match(p.name).group(2)))]
        length = min(len(t) for t in tables)
        header = ["t", "seeds"]
        for column in DIAGNOSTICS_COLUMNS[1:]:
            header += [f"{column}_median", f"{column}_lo", f"{column}_hi"]

        rows = []
        for k in range(length):
            row: List[Any] = [float(tables[0][k]["t"]), len(tables)]
            for column in DIAGNOSTICS_COLUMNS[1:]:
                values = np.array([float(t[k][column]) for t in tables])
                finite = values[np.isfinite(values)]
                if finite.size == 0:
                    row += [float("nan")] * 3
                    continue
                row += [float(np.median(finite)), float(np.quantile(finite, 0.05)),
                        float(np.quantile(finite, 0.95))]
            rows.append(row)
        written.append(write_csv(out_dir / f"summary_{run_dir.name}_{tag}.csv", header, rows))
    return written


def report(results_dir: Union[str, Path], out: Optional[str] = None) -> Dict[str, Any]:
    """
    Summary tables and the acceptance table for every run under results_dir.

    Raises:
        ValidationError: No run manifests under results_dir
    """
    results_dir = Path(results_dir)
    manifests = load_manifests(results_dir)
    if not manifests:
        raise ValidationError(f"No run manifests found under {results_dir}", details={"dir": str(results_dir)})

    out_dir = Path(out) if out else results_dir / REPORT_DIR
    summaries: List[Path] = []
    for manifest in manifests:
        if manifest.get("status") != "success":
            logger.warning(f"⚠️ Skipping failed run {manifest.get('name')!r}")
            continue
        if manifest.get("kind") == "simulate":
            summaries += summarize_diagnostics(manifest["dir"], out_dir)

    rows = acceptance_table(results_dir)
    table = write_csv(
        out_dir / "acceptance.csv",
        ("criterion", "title", "measured", "threshold", "status", "detail"),
        ([r.criterion, r.title, float("nan") if r.measured is None else r.measured, r.threshold or "",
          r.status, r.detail] for r in rows),
    )
    write_json(out_dir / "acceptance.json", {"criteria": [r.model_dump() for r in rows]})

    passed = sum(1 for r in rows if r.status == "pass")
    failed = sum(1 for r in rows if r.status == "fail")
    logger.info(f"✅ Report: {len(summaries)} summary tables, acceptance {passed} pass / {failed} fail / "
                f"{len(rows) - passed - failed} not run")
    return {"summaries": [str(p) for p in summaries], "acceptance": str(table),
            "passed": passed, "failed": failed}


# --- acceptance --------------------------------------------------------------------------------

def _find(results_dir: Path, pattern: str) -> List[Path]:
    return sorted(p for p in results_dir.rglob(pattern) if REPORT_DIR not in p.relative_to(results_dir).parts)


def _load_json(path: Path) -> Dict[str, Any]:
    return json.loads(path.read_text(encoding="utf-8"))


def _floats(rows: List[Dict[str, str]], column: str) -> np.ndarray:
    return np.array([float(r[column]) for r in rows])


def _row(criterion: int, measured: Optional[float], threshold: str, ok: bool, detail: str = "") -> AcceptanceRow:
    if measured is not None and not math.isfinite(measured):
        measured = None
    return AcceptanceRow(criterion=criterion, title=ACCEPTANCE_TITLES[criterion], measured=measured,
                         threshold=threshold, status="pass" if ok else "fail", detail=detail)


def _not_run(criterion: int, detail: str) -> AcceptanceRow:
    return AcceptanceRow(criterion=criterion, title=ACCEPTANCE_TITLES[criterion], status="not_run", detail=detail)


def _kernel_identities(results_dir: Path) -> AcceptanceRow:
    paths = _find(results_dir, "kernel_checks.json")
    if not paths:
        return _not_run(1, "no kernel_checks.json (calibrate_estimators run)")
    c = _load_json(paths[0])
    ok = (c["origin_max_abs"] == 0.0 and c["outer_max_abs_gap"] == 0.0
          and c["bound_max_excess"] <= 1e-12 and c["divergence_max_rel"] <= 1e-3)
    detail = (f"origin={c['origin_max_abs']:.3g} outer_gap={c['outer_max_abs_gap']:.3g} "
              f"bound_excess={c['bound_max_excess']:.3g}")
    return _row(1, c["divergence_max_rel"], "div rel <= 1e-3; exact identities", ok, detail)


def _sde_calibration(results_dir: Path) -> AcceptanceRow:
    paths = _find(results_dir, "sde_calibration.json")
    if not paths:
        return _not_run(2, "no sde_calibration.json (calibrate_estimators run)")
    c = _load_json(paths[0])
    msd_ok = abs(c["msd"] - c["msd_expected"]) <= 3.0 * c["msd_se"]
    ok = msd_ok and c["strong_order"] >= 0.8
    detail = f"msd={c['msd']:.5g} expected={c['msd_expected']:.5g} se={c['msd_se']:.3g}"
    return _row(2, c["strong_order"], "|msd - 6t| <= 3 SE; strong order >= 0.8", ok, detail)


def _ensembles(results_dir: Path) -> List[List[Dict[str, str]]]:
    return [read_csv(p) for p in _find(results_dir, "ensemble_*.csv")]


def _energy_balance(tables) -> AcceptanceRow:
    if not tables:
        return _not_run(3, "no ensemble tables (simulate run)")
    worst = max(float(np.max(_floats(t, "excess_mean") - 3.0 * _floats(t, "excess_se"))) for t in tables)
    return _row(3, worst, "mean[E + work] - E(0) <= 3 SE", worst <= 1e-12)


def _martingale(tables) -> AcceptanceRow:
    if not tables:
        return _not_run(4, "no ensemble tables (simulate run)")
    worst = max(float(np.max(_floats(t, "martingale_sq_mean") - _floats(t, "martingale_sq_bound")
                             - 3.0 * _floats(t, "martingale_sq_se"))) for t in tables)
    return _row(4, worst, "E[M^2] <= 8N work + 3 SE", worst <= 1e-12)


def _entropy_trend(tables) -> AcceptanceRow:
    if not tables:
        return _not_run(5, "no ensemble tables (simulate run)")
    worst = -math.inf
    for t in tables:
        h = _floats(t, "entropy_mean")
        se = _floats(t, "entropy_se")
        if not np.all(np.isfinite(h)):
            return _not_run(5, "entropy estimates were disabled")
        for k in range(1, h.size):
            band = 3.0 * np.sqrt(se[:k] ** 2 + se[k] ** 2)
            worst = max(worst, float(np.max(h[k] - h[:k] - band)))
    return _row(5, worst, "H(t_k) <= H(t_j) + 3 SE for j < k", worst <= 0.0)


def _estimator_calibration(results_dir: Path) -> AcceptanceRow:
    paths = _find(results_dir, "calibration.csv")
    if not paths:
        return _not_run(6, "no calibration.csv (calibrate_estimators run)")
    rows = read_csv(paths[0])
    failed = [f"{r['estimator']}/{r['target']}" for r in rows if r["passed"] != "1"]
    return _row(6, float(len(failed)), "entropy 2% / 0.05 abs, Fisher 10%", not failed, ", ".join(failed))


def _pde_solver(results_dir: Path) -> AcceptanceRow:
    paths = _find(results_dir, "pde_summary.json")
    if not paths:
        return _not_run(7, "no pde_summary.json (pde_solve run)")
    c = _load_json(paths[0])
    residuals = [v for _, v in sorted(c["mild_residual"].items(), key=lambda item: int(item[0]))]
    richardson = c.get("richardson", {}).get("order")
    checks = {
        "mass": c["mass_drift"] <= 1e-10,
        "positivity": c["min_rho"] >= 0.0,
        "heat_limit": c["heat_limit_l1"] <= 2e-3,
        "richardson": richardson is not None and richardson >= 0.9,
        "entropy_identity": c.get("entropy_identity_max_rel", math.inf) <= 0.01,
        "energy_decay": c.get("max_dE_dt", math.inf) <= 0.0,
        "mild": residuals[-1] <= 5e-3,
        "mild_refinement": all(b <= a for a, b in zip(residuals, residuals[1:])),
    }
    failed = [name for name, ok in checks.items() if not ok]
    return _row(7, residuals[-1], "mass 1e-10, heat L1 2e-3, order 0.9, identity 1%, mild 5e-3",
                not failed, "failed: " + ", ".join(failed) if failed else "")


def _weakform(results_dir: Path) -> List[AcceptanceRow]:
    paths = _find(results_dir, "weakform_scaling.json")
    if not paths:
        return [_not_run(8, "no weakform_scaling.json"), _not_run(9, "no weakform_scaling.json")]
    scans = [_load_json(p) for p in paths]

    slopes = [v for c in scans for v in c["n_slope"].values() if v is not None]
    zero_ok = all(
        c.get("constant_max_abs") in (None, 0.0) and (c.get("linear_max_abs_remainder") or 0.0) <= 1e-10
        for c in scans
    )
    if slopes:
        slope = max(slopes)
        scaling = _row(8, slope, "slope <= -0.3; constant / linear exact", slope <= -0.3 and zero_ok)
    else:
        scaling = _not_run(8, "fewer than two N values")

    worst = -math.inf
    for c in scans:
        for by_eps in c["gap_by_epsilon"].values():
            gaps = [v for _, v in sorted(by_eps.items(), key=lambda item: -float(item[0])) if v is not None]
            for a, b in zip(gaps, gaps[1:]):
                worst = max(worst, b - a)
    if worst == -math.inf:
        trend = _not_run(9, "fewer than two epsilon values")
    else:
        trend = _row(9, worst, "median gap non-increasing as eps decreases", worst <= 0.0)
    return [scaling, trend]


def _noncollision(results_dir: Path) -> AcceptanceRow:
    paths = _find(results_dir, "noncollision_summary.csv")
    if not paths:
        return _not_run(10, "no noncollision_summary.csv")
    rows = read_csv(paths[0])
    by_n: Dict[str, List[Dict[str, str]]] = defaultdict(list)
    for r in rows:
        by_n[r["N"]].append(r)
    worst = -math.inf
    for group in by_n.values():
        group.sort(key=lambda r: -float(r["epsilon"]))
        for a, b in zip(group, group[1:]):
            band = 3.0 * math.hypot(float(a["se"]), float(b["se"]))
            worst = max(worst, float(b["p_hat"]) - float(a["p_hat"]) - band)
    if worst == -math.inf:
        return _not_run(10, "fewer than two epsilon values")
    return _row(10, worst, "P(tau <= T) non-increasing within 3 SE", worst <= 0.0)


def _chaos(results_dir: Path) -> AcceptanceRow:
    paths = _find(results_dir, "chaos_summary.csv")
    if not paths:
        return _not_run(11, "no chaos_summary.csv")
    rows = read_csv(paths[0])
    by_eps: Dict[str, List[Dict[str, str]]] = defaultdict(list)
    for r in rows:
        by_eps[r["epsilon"]].append(r)

    ok = True
    measured = None
    details = []
    for eps, group in by_eps.items():
        group.sort(key=lambda r: int(r["N"]))
        ks = [float(r["radial_ks"]) for r in group]
        cov = [float(r["median_abs_pair_cov"]) for r in group]
        if len(group) < 2:
            details.append(f"eps={eps}: single N")
            ok = False
            continue
        ok &= all(b < a for a, b in zip(ks, ks[1:]))
        ok &= all(b < a for a, b in zip(cov, cov[1:]))
        largest = group[-1]
        limit = 2.0 * float(largest["dkw_bound"]) + 2e-3
        ok &= ks[-1] <= limit
        measured = ks[-1]
        details.append(f"eps={eps}: ks={ks} limit={limit:.4g}")
    return _row(11, measured, "KS and |cov| decreasing in N; KS(N_max) <= 2 DKW + 2e-3", ok, "; ".join(details))


def acceptance_table(results_dir: Union[str, Path]) -> List[AcceptanceRow]:
    """
    Criteria 1-11 evaluated from the artifacts under results_dir; criteria whose runs are
    missing are reported as not_run.
    """
    results_dir = Path(results_dir)
    tables = _ensembles(results_dir)
    rows = [
        _kernel_identities(results_dir),
        _sde_calibration(results_dir),
        _energy_balance(tables),
        _martingale(tables),
        _entropy_trend(tables),
        _estimator_calibration(results_dir),
        _pde_solver(results_dir),
        *_weakform(results_dir),
        _noncollision(results_dir),
        _chaos(results_dir),
    ]
    return sorted(rows, key=lambda r: r.criterion)
