from __future__ import annotations

import math
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

DIAGNOSTICS_COLUMNS = (
    "t", "energy", "energy_mollified", "entropy_est", "fisher_est",
    "m2", "min_dist", "martingale", "work",
)


class DiagnosticsRow(BaseModel):
    """
    One timestamped diagnostics record of a simulated path.

    Attributes:
        t: Output time
        energy: Pair energy with the exact kernel
        energy_mollified: Pair energy with the mollified kernel
        entropy_est: kNN estimate of int rho log rho (nan when not computed)
        fisher_est: KDE estimate of the Fisher information (nan when not computed)
        m2: Mean squared distance to the origin
        min_dist: Smallest pair distance
        martingale: Running martingale value
        work: Running work integral
    """

    t: float = Field(..., ge=0.0, description="Output time")
    energy: float = Field(..., description="Exact-kernel pair energy")
    energy_mollified: float = Field(..., ge=0.0, description="Mollified-kernel pair energy")
    entropy_est: float = Field(float("nan"), description="int rho log rho estimate")
    fisher_est: float = Field(float("nan"), description="Fisher information estimate")
    m2: float = Field(..., ge=0.0, description="Second moment")
    min_dist: float = Field(float("nan"), description="Minimum pair distance; nan for a single particle")
    martingale: float = Field(0.0, description="Martingale value")
    work: float = Field(0.0, ge=0.0, description="Work integral")

    @field_validator("energy")
    @classmethod
    def energy_non_negative(cls, v: float) -> float:
        if not math.isnan(v) and v < 0.0:
            raise ValueError("energy must be non-negative")
        return v

    @field_validator("min_dist")
    @classmethod
    def distinct_positions(cls, v: float) -> float:
        if not math.isnan(v) and not v > 0.0:
            raise ValueError("min_dist must be positive: particles must occupy distinct positions")
        return v

    def as_row(self) -> List[float]:
        return [getattr(self, column) for column in DIAGNOSTICS_COLUMNS]


class WeakResidualReport(BaseModel):
    """
    Weak-form residual of the empirical measure for one (seed, test function, t).

    value = ito_martingale_part + remainder_part; exact_value = value + mollification_gap_part.
    """

    value: float = Field(..., description="Residual with the mollified kernel")
    N: int = Field(..., ge=1, description="Particle count")
    epsilon: float = Field(..., gt=0.0, description="Mollification radius")
    t: float = Field(..., ge=0.0, description="Evaluation time")
    seed: int = Field(..., ge=0, description="Path seed")
    phi: str = Field(..., description="Test function label")
    ito_martingale_part: Optional[float] = Field(None, description="Discrete Ito integral of grad phi")
    remainder_part: Optional[float] = Field(None, description="value minus the Ito part")
    mollification_gap_part: Optional[float] = Field(None, description="Exact-kernel minus mollified residual")
    exact_value: Optional[float] = Field(None, description="Residual with the exact kernel")


class ChaosReport(BaseModel):
    """
    Propagation-of-chaos metrics of an N-particle ensemble at time t.
    """

    N: int = Field(..., ge=1)
    t: float = Field(..., ge=0.0)
    epsilon: float = Field(..., gt=0.0)
    radial_ks: float = Field(..., ge=0.0, le=1.0, description="Median KS distance to the PDE radial CDF")
    radial_ks_seeds: List[float] = Field(default_factory=list, description="Per-seed KS distances")
    sliced_w1: float = Field(..., ge=0.0, description="Median sliced Wasserstein-1 distance")
    pair_cov: Dict[str, float] = Field(default_factory=dict, description="Pair covariance per test function")
    pair_cov_se: Dict[str, float] = Field(default_factory=dict, description="Jackknife standard errors")
    seeds: List[int] = Field(default_factory=list)


class EstimatorCalibration(BaseModel):
    """
    One estimator evaluated on a closed-form target.
    """

    estimator: str
    target: str
    n_samples: int
    estimate: float
    expected: float
    tolerance: float
    relative: bool = True

    @property
    def passed(self) -> bool:
        gap = abs(self.estimate - self.expected)
        if self.relative:
            gap /= abs(self.expected)
        return gap <= self.tolerance


class AcceptanceRow(BaseModel):
    """
    One acceptance criterion with its measured value and verdict.
    """

    criterion: int = Field(..., ge=1, le=11)
    title: str
    measured: Optional[float] = None
    threshold: Optional[str] = None
    status: Literal["pass", "fail", "not_run"] = "not_run"
    detail: str = ""


class RunManifest(BaseModel):
    """
    Provenance record written next to every run's data files.
    """

    name: str
    kind: str
    config_sha256: str
    app_version: str
    started_at: str = Field(..., description="UTC start timestamp (excluded from determinism checks)")
    wall_time_s: float = Field(..., ge=0.0)
    status: Literal["success", "error"] = "success"
    seeds: List[int] = Field(default_factory=list)
    files: Dict[str, str] = Field(default_factory=dict, description="Data file name -> sha256")
    error: Optional[Dict[str, object]] = None
