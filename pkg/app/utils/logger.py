"""
Structured logging for the Coulomb mean-field lab.
Log records are single-line JSON objects so experiment logs can be grepped and parsed alongside
the result files.
"""

import json
import logging
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Iterator

import numpy as np


def _json_default(value: Any) -> Any:
    """Serialize numpy scalars and arrays; fall back to str for anything else."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist() if value.size <= 16 else f"<array shape={value.shape} dtype={value.dtype}>"
    return str(value)


class StructuredLogger:
    """
    Logger emitting one JSON object per record: timestamp, level, logger, message and context.
    """

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)
        self.name = name

    def _log_structured(self, level: int, message: str, **context):
        if not self.logger.isEnabledFor(level):
            return
        record = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": logging.getLevelName(level),
            "logger": self.name,
            "message": message,
            **context,
        }
        self.logger.log(level, json.dumps(record, default=_json_default))

    def debug(self, message: str, **context):
        self._log_structured(logging.DEBUG, message, **context)

    def info(self, message: str, **context):
        self._log_structured(logging.INFO, message, **context)

    def warning(self, message: str, **context):
        self._log_structured(logging.WARNING, message, **context)

    def error(self, message: str, **context):
        self._log_structured(logging.ERROR, message, **context)


class ServiceLogger(StructuredLogger):
    """
    Structured logger for one experiment kind: operation lifecycle and per-rung progress.
    """

    def __init__(self, service_name: str):
        super().__init__(f"service.{service_name}")
        self.service_name = service_name

    def log_operation_start(self, operation: str, **context):
        self.info(f"{self.service_name} operation started", operation=operation, **context)

    def log_operation_success(self, operation: str, duration: float, **context):
        self.info(f"{self.service_name} operation completed", operation=operation,
                  duration_ms=round(duration * 1000, 2), **context)

    def log_operation_error(self, operation: str, error: BaseException, **context):
        self.error(f"{self.service_name} operation failed", operation=operation,
                   error_type=type(error).__name__, error_message=str(error), **context)

    @contextmanager
    def operation(self, operation: str, **context) -> Iterator[dict]:
        """
        Log start, wall time and failure of a block. Keys added to the yielded dict are
        attached to the completion record.

        Example:
            with service_logger.operation("simulate", name="smoke") as outcome:
                outcome["files"] = 12
        """
        self.log_operation_start(operation, **context)
        outcome: dict = {}
        started = time.perf_counter()
        try:
            yield outcome
        except BaseException as e:
            self.log_operation_error(operation, e, **context)
            raise
        self.log_operation_success(operation, time.perf_counter() - started, **context, **outcome)

    def log_rung(self, n_particles: int, epsilon: float, **metrics):
        """Log one finished (N, epsilon) rung of a ladder with its headline numbers."""
        self.info(f"{self.service_name} rung finished", N=n_particles, epsilon=epsilon, **metrics)


def get_logger(name: str) -> StructuredLogger:
    return StructuredLogger(name)


def get_service_logger(service_name: str) -> ServiceLogger:
    return ServiceLogger(service_name)
