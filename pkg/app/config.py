"""
Configuration settings for the Coulomb mean-field lab.
Provides centralized process-level configuration with validation and environment variable support.
"""

import os
import logging
from typing import Dict, Any
from pathlib import Path

logger = logging.getLogger(__name__)


class LoggingConfig:
    """Configuration for logging settings."""

    # Log level
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Log format
    LOG_FORMAT: str = os.getenv("LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    # Enable/disable console logging
    ENABLE_CONSOLE_LOGGING: bool = os.getenv("ENABLE_CONSOLE_LOGGING", "true").lower() == "true"

    # Enable/disable file logging
    ENABLE_FILE_LOGGING: bool = os.getenv("ENABLE_FILE_LOGGING", "true").lower() == "true"


class KernelConfig:
    """Configuration for pairwise force evaluation."""

    # Barnes-Hut opening angle (box side / distance)
    TREE_THETA: float = float(os.getenv("KERNEL_TREE_THETA", "0.25"))

    # Maximum particles per octree leaf
    LEAF_SIZE: int = int(os.getenv("KERNEL_LEAF_SIZE", "16"))

    # Target rows per block of the direct summation
    BLOCK_ROWS: int = int(os.getenv("KERNEL_BLOCK_ROWS", "256"))


class SimulationConfig:
    """Configuration for the particle simulator."""

    # Quadrature times stored per run (diagnostics cadence)
    OUTPUT_TIMES: int = int(os.getenv("SIM_OUTPUT_TIMES", "64"))

    # Position snapshots persisted per run
    SNAPSHOT_TIMES: int = int(os.getenv("SIM_SNAPSHOT_TIMES", "32"))

    # Largest allowed displacement per step, in units of epsilon
    DRIFT_CAP_FRACTION: float = float(os.getenv("SIM_DRIFT_CAP_FRACTION", "0.25"))

    # Worker pool size when the CLI does not pass --workers
    DEFAULT_WORKERS: int = int(os.getenv("SIM_DEFAULT_WORKERS", "1"))


class EstimatorConfig:
    """Configuration for entropy / Fisher information estimators."""

    KNN_NEIGHBORS: int = int(os.getenv("KNN_NEIGHBORS", "4"))
    FISHER_EVAL_POINTS: int = int(os.getenv("FISHER_EVAL_POINTS", "2000"))
    FISHER_MIN_SAMPLES: int = int(os.getenv("FISHER_MIN_SAMPLES", "1000"))

    # Raise on duplicate points instead of jittering them
    ENTROPY_STRICT: bool = os.getenv("ENTROPY_STRICT", "false").lower() == "true"


class SolverConfig:
    """Configuration for the radial Fokker-Planck reference solver."""

    CFL: float = float(os.getenv("PDE_CFL", "0.4"))

    # sup-norm growth that trips the blow-up monitor
    BLOWUP_FACTOR: float = float(os.getenv("PDE_BLOWUP_FACTOR", "10.0"))

    DEFAULT_CELLS: int = int(os.getenv("PDE_DEFAULT_CELLS", "2048"))

    # Heat-solution mass allowed beyond the outer wall
    LEAKAGE_TOL: float = float(os.getenv("PDE_LEAKAGE_TOL", "1e-8"))


class AppConfig:
    """Main application configuration."""

    # Log directory
    LOG_DIR: str = os.getenv("LOG_DIR", "logs")

    # Default results directory
    RESULTS_DIR: str = os.getenv("RESULTS_DIR", "results")

    # Application settings
    APP_NAME: str = os.getenv("APP_NAME", "Coulomb Mean-Field Lab")
    APP_VERSION: str = os.getenv("APP_VERSION", "0.1.0")
    DEBUG: bool = os.getenv("DEBUG", "false").lower() == "true"

    # Schema version accepted for experiment config files
    SCHEMA_VERSION: int = 1

    KERNEL = KernelConfig()

    SIMULATION = SimulationConfig()

    ESTIMATORS = EstimatorConfig()

    SOLVER = SolverConfig()

    LOGGING = LoggingConfig()

    @classmethod
    def validate_config(cls) -> list:
        """
        Validate configuration values and return list of validation errors.

        Returns:
            list: List of validation error messages
        """
        errors = []

        if not 0.0 < cls.KERNEL.TREE_THETA < 1.0:
            errors.append("KERNEL_TREE_THETA must be in (0, 1)")

        if cls.KERNEL.LEAF_SIZE < 1:
            errors.append("KERNEL_LEAF_SIZE must be at least 1")

        if cls.KERNEL.BLOCK_ROWS < 1:
            errors.append("KERNEL_BLOCK_ROWS must be at least 1")

        if cls.SIMULATION.OUTPUT_TIMES < 2:
            errors.append("SIM_OUTPUT_TIMES must be at least 2")

        if not 0.0 < cls.SIMULATION.DRIFT_CAP_FRACTION <= 1.0:
            errors.append("SIM_DRIFT_CAP_FRACTION must be in (0, 1]")

        if cls.ESTIMATORS.KNN_NEIGHBORS < 1:
            errors.append("KNN_NEIGHBORS must be at least 1")

        if not 0.0 < cls.SOLVER.CFL <= 1.0:
            errors.append("PDE_CFL must be in (0, 1]")

        if cls.SOLVER.BLOWUP_FACTOR <= 1.0:
            errors.append("PDE_BLOWUP_FACTOR must exceed 1")

        # Validate directories
        try:
            Path(cls.LOG_DIR).mkdir(parents=True, exist_ok=True)
        except Exception as e:
            errors.append(f"Cannot create log directory {cls.LOG_DIR}: {str(e)}")

        return errors

    @classmethod
    def get_config_summary(cls) -> Dict[str, Any]:
        """
        Get a summary of current configuration for debugging.

        Returns:
            Dict containing configuration summary
        """
        return {
            "app": {
                "name": cls.APP_NAME,
                "version": cls.APP_VERSION,
                "debug": cls.DEBUG,
                "results_dir": cls.RESULTS_DIR
            },
            "kernel": {
                "tree_theta": cls.KERNEL.TREE_THETA,
                "leaf_size": cls.KERNEL.LEAF_SIZE,
                "block_rows": cls.KERNEL.BLOCK_ROWS
            },
            "simulation": {
                "output_times": cls.SIMULATION.OUTPUT_TIMES,
                "snapshot_times": cls.SIMULATION.SNAPSHOT_TIMES,
                "drift_cap_fraction": cls.SIMULATION.DRIFT_CAP_FRACTION,
                "default_workers": cls.SIMULATION.DEFAULT_WORKERS
            },
            "estimators": {
                "knn_neighbors": cls.ESTIMATORS.KNN_NEIGHBORS,
                "fisher_eval_points": cls.ESTIMATORS.FISHER_EVAL_POINTS,
                "entropy_strict": cls.ESTIMATORS.ENTROPY_STRICT
            },
            "solver": {
                "cfl": cls.SOLVER.CFL,
                "blowup_factor": cls.SOLVER.BLOWUP_FACTOR,
                "default_cells": cls.SOLVER.DEFAULT_CELLS
            },
            "logging": {
                "level": cls.LOGGING.LOG_LEVEL,
                "console": cls.LOGGING.ENABLE_CONSOLE_LOGGING,
                "file": cls.LOGGING.ENABLE_FILE_LOGGING
            }
        }
