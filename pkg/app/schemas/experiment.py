"""
Experiment configuration schema: a versioned YAML document validated before any compute.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Any, Dict, Iterator, List, Literal, Optional, Union, get_args

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from app.config import AppConfig
from app.utils.exceptions import ConfigurationError, ValidationError
from app.utils.validators import validate_seeds

ExperimentKind = Literal[
    "simulate", "pde_solve", "weakform_scan", "chaos_scan", "noncollision_scan", "calibrate_estimators",
]
EXPERIMENT_KINDS = get_args(ExperimentKind)


class GaussianDensity(BaseModel):
    kind: Literal["gaussian"] = "gaussian"
    sigma: float = Field(1.0, gt=0.0, description="Standard deviation per coordinate")


class UniformBallDensity(BaseModel):
    kind: Literal["uniform_ball"] = "uniform_ball"
    radius: float = Field(1.0, gt=0.0, description="Ball radius")


class RadialTableDensity(BaseModel):
    kind: Literal["radial_table"] = "radial_table"
    r: List[float] = Field(..., min_length=2, description="Radii, starting at 0")
    rho: List[float] = Field(..., min_length=2, description="Density values at the radii")


DensitySpec = Annotated[
    Union[GaussianDensity, UniformBallDensity, RadialTableDensity],
    Field(discriminator="kind"),
]


class PdeSettings(BaseModel):
    """
    Radial reference solver settings.
    """

    cells: int = Field(default_factory=lambda: AppConfig.SOLVER.DEFAULT_CELLS, ge=2)
    radius: Optional[float] = Field(None, gt=0.0, description="Outer wall; default r_cloud + 8 sqrt(2T)")
    cfl: Optional[float] = Field(None, gt=0.0, le=1.0)
    output_times: int = Field(64, ge=2)
    interaction: bool = True
    mass: float = Field(1.0, gt=0.0)
    refinement: List[int] = Field(default_factory=list, description="Extra cell counts for refinement studies")


class TestFunctionSettings(BaseModel):
    """
    Test-function battery: icosahedral bump centres scaled by center_scale, one bump per (centre, width).
    """

    center_scale: float = Field(1.0, gt=0.0)
    widths: List[float] = Field(default_factory=lambda: [0.5, 1.0], min_length=1)
    kind: Literal["gaussian_bump", "polynomial_taper"] = "gaussian_bump"
    centers: int = Field(5, ge=1, le=12)


class ChaosSettings(BaseModel):
    directions: int = Field(64, ge=1, description="Random directions of the sliced distance")
    t: Optional[float] = Field(None, ge=0.0, description="Evaluation time; default T")


class CalibrationSettings(BaseModel):
    samples: int = Field(100_000, ge=1000)


class ExperimentConfig(BaseModel):
    """
    Declarative description of one experiment: a particle ensemble over N / epsilon ladders and seeds,
    a radial PDE solve, or an estimator calibration.
    """

    schema_version: Literal[1] = Field(..., description="Config schema version")
    name: str = Field(..., min_length=1, pattern=r"^[\w.\-]+$")
    kind: ExperimentKind
    n_particles: Union[int, List[int]] = Field(256, description="N or N ladder")
    epsilon: Union[float, List[float]] = Field(0.05, description="epsilon or epsilon ladder")
    dt: Optional[float] = Field(None, gt=0.0, description="Time step; default pi * eps^3 per epsilon")
    T: float = Field(0.25, ge=0.0)
    output_times: int = Field(default_factory=lambda: AppConfig.SIMULATION.OUTPUT_TIMES, ge=2)
    snapshot_times: int = Field(default_factory=lambda: AppConfig.SIMULATION.SNAPSHOT_TIMES, ge=1)
    rho0: DensitySpec = Field(default_factory=GaussianDensity)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    kernel_method: Literal["direct", "tree"] = "direct"
    theta: Optional[float] = Field(None, gt=0.0, lt=1.0)
    retain_increments: bool = True
    entropy: bool = True
    fisher: Optional[bool] = None
    knn_k: int = Field(default_factory=lambda: AppConfig.ESTIMATORS.KNN_NEIGHBORS, ge=1)
    pde: Optional[PdeSettings] = None
    test_functions: TestFunctionSettings = Field(default_factory=TestFunctionSettings)
    chaos: ChaosSettings = Field(default_factory=ChaosSettings)
    calibration: CalibrationSettings = Field(default_factory=CalibrationSettings)
    output_dir: Optional[str] = None

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "examples": [
                {
                    "schema_version": 1,
                    "name": "smoke",
                    "kind": "simulate",
                    "n_particles": 8,
                    "epsilon": 0.5,
                    "T": 0.01,
                    "seeds": [1],
                }
            ]
        },
    }

    @field_validator("n_particles")
    @classmethod
    def positive_counts(cls, v):
        counts = v if isinstance(v, list) else [v]
        if not counts or any(n < 1 for n in counts):
            raise ValueError("n_particles must be a positive count or a non-empty ladder of them")
        return v

    @field_validator("epsilon")
    @classmethod
    def positive_epsilon(cls, v):
        values = v if isinstance(v, list) else [v]
        if not values or any(not (math.isfinite(e) and e > 0.0) for e in values):
            raise ValueError("epsilon must be a positive length or a non-empty ladder of them")
        return v

    @field_validator("seeds")
    @classmethod
    def distinct_seeds(cls, v: List[int]) -> List[int]:
        try:
            return validate_seeds(v)
        except ValidationError as e:
            raise ValueError(e.message)

    @field_validator("rho0")
    @classmethod
    def admissible_density(cls, v):
        from app.utils.exceptions import ValidationError as InputError
        try:
            _density_from_spec(v)
        except InputError as e:
            raise ValueError(e.message)
        return v

    @model_validator(mode="after")
    def step_size_rule(self) -> "ExperimentConfig":
        from app.services.sde import max_stable_dt

        if self.dt is not None:
            for eps in self.epsilon_ladder:
                limit = max_stable_dt(eps)
                if self.dt > limit * (1.0 + 1e-12):
                    raise ValueError(
                        f"dt={self.dt:g} violates the step-size rule dt <= pi*eps^3 "
                        f"(= {limit:.6g} for eps={eps:g})"
                    )
        return self

    @property
    def n_ladder(self) -> List[int]:
        return list(self.n_particles) if isinstance(self.n_particles, list) else [self.n_particles]

    @property
    def epsilon_ladder(self) -> List[float]:
        return list(self.epsilon) if isinstance(self.epsilon, list) else [self.epsilon]

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir) if self.output_dir else Path(AppConfig.RESULTS_DIR) / self.name

    def initial_density(self):
        return _density_from_spec(self.rho0)

    def with_overrides(self, seed_offset: int = 0, output_dir: Optional[str] = None) -> "ExperimentConfig":
        """
        Copy with every seed shifted by seed_offset and/or a new output directory, re-validated.
        """
        data = self.model_dump()
        if seed_offset:
            data["seeds"] = [s + seed_offset for s in self.seeds]
        if output_dir:
            data["output_dir"] = output_dir
        return ExperimentConfig.model_validate(data)

    def run_specs(self, n: int, epsilon: float) -> Iterator[Any]:
        """
        One resolved RunSpec per seed for a given (N, epsilon) rung.
        """
        from app.services.sde import RunSpec

        rho0 = self.initial_density()
        for seed in self.seeds:
            yield RunSpec(
                n_particles=n,
                epsilon=epsilon,
                T=self.T,
                rho0=rho0,
                seed=seed,
                dt=self.dt,
                output_times=self.output_times,
                method=self.kernel_method,
                theta=self.theta,
                retain_increments=self.retain_increments,
                with_entropy=self.entropy,
                with_fisher=self.fisher,
                knn_k=self.knn_k,
            )

    def canonical(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _density_from_spec(spec):
    from app.services.sde import InitialDensity

    if spec.kind == "gaussian":
        return InitialDensity.gaussian(spec.sigma)
    if spec.kind == "uniform_ball":
        return InitialDensity.uniform_ball(spec.radius)
    return InitialDensity.radial_table(spec.r, spec.rho)


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate an experiment config file.

    Raises:
        ConfigurationError: Unreadable file or malformed YAML
        pydantic.ValidationError: Schema violations (field named in the message)
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {str(e)}", details={"path": str(path)})
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Malformed YAML in {path}: {str(e)}", details={"path": str(path)})

    if not isinstance(raw, dict):
        raise ConfigurationError(f"Config file {path} must contain a mapping", details={"path": str(path)})
    if raw.get("schema_version") != AppConfig.SCHEMA_VERSION:
        raise ConfigurationError(
            f"Unsupported schema_version {raw.get('schema_version')!r}; expected {AppConfig.SCHEMA_VERSION}",
            details={"path": str(path)}
        )
    return ExperimentConfig.model_validate(raw)
