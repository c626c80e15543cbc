"""
Tests for the structured JSON loggers.
"""

import json
import logging

import numpy as np
import pytest

from app.utils.logger import get_logger, get_service_logger


def _records(caplog):
    return [json.loads(r.getMessage()) for r in caplog.records]


class TestStructuredLogger:
    def test_record_fields(self, caplog):
        caplog.set_level(logging.INFO)
        get_logger("unit").info("hello", N=np.int64(8), energy=np.float64(0.25))
        record = _records(caplog)[0]
        assert record["message"] == "hello"
        assert record["logger"] == "unit"
        assert record["level"] == "INFO"
        assert record["N"] == 8
        assert record["energy"] == 0.25

    def test_large_arrays_are_summarized(self, caplog):
        caplog.set_level(logging.INFO)
        get_logger("unit").info("arrays", small=np.arange(3), big=np.zeros((10, 3)))
        record = _records(caplog)[0]
        assert record["small"] == [0, 1, 2]
        assert record["big"].startswith("<array shape=(10, 3)")

    def test_disabled_level_is_skipped(self, caplog):
        caplog.set_level(logging.INFO)
        get_logger("unit").debug("hidden")
        assert caplog.records == []


class TestServiceLogger:
    def test_operation_success(self, caplog):
        caplog.set_level(logging.INFO)
        with get_service_logger("simulate").operation("simulate", name="smoke") as outcome:
            outcome["files"] = 3
        start, done = _records(caplog)
        assert start["message"] == "simulate operation started"
        assert done["message"] == "simulate operation completed"
        assert done["files"] == 3
        assert done["duration_ms"] >= 0.0

    def test_operation_failure(self, caplog):
        caplog.set_level(logging.INFO)
        with pytest.raises(ValueError):
            with get_service_logger("pde_solve").operation("pde_solve"):
                raise ValueError("boom")
        failure = _records(caplog)[-1]
        assert failure["level"] == "ERROR"
        assert failure["error_type"] == "ValueError"
        assert failure["error_message"] == "boom"

    def test_rung(self, caplog):
        caplog.set_level(logging.INFO)
        get_service_logger("chaos_scan").log_rung(256, 0.05, radial_ks=0.01)
        record = _records(caplog)[0]
        assert record["logger"] == "service.chaos_scan"
        assert (record["N"], record["epsilon"], record["radial_ks"]) == (256, 0.05, 0.01)
