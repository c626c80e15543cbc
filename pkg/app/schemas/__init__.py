from .experiment import ExperimentConfig, load_experiment_config
from .results import (
    AcceptanceRow,
    ChaosReport,
    DiagnosticsRow,
    EstimatorCalibration,
    RunManifest,
    WeakResidualReport,
)

__all__ = [
    "ExperimentConfig", "load_experiment_config",
    "AcceptanceRow", "ChaosReport", "DiagnosticsRow", "EstimatorCalibration",
    "RunManifest", "WeakResidualReport",
]
