"""
Centralized exception handling for the Coulomb mean-field lab.
Provides custom exceptions and the mapping from error codes to CLI exit codes.
"""

from typing import Dict, Any
import logging

logger = logging.getLogger(__name__)


class MeanFieldError(Exception):
    """
    Base exception for the mean-field lab.
    """

    def __init__(self, message: str, error_code: str = None, details: Dict[str, Any] = None):
        self.message = message
        self.error_code = error_code or "UNKNOWN_ERROR"
        self.details = details or {}
        super().__init__(self.message)


class ConfigurationError(MeanFieldError):
    """
    Exception for experiment configuration errors.
    """

    def __init__(self, message: str, error_code: str = "CONFIG_ERROR", details: Dict[str, Any] = None):
        super().__init__(message, error_code, details)


class ValidationError(MeanFieldError):
    """
    Exception for invalid numerical inputs (non-finite positions, bad tables, too few samples).
    """

    def __init__(self, message: str, error_code: str = "VALIDATION_ERROR", details: Dict[str, Any] = None):
        super().__init__(message, error_code, details)


class NumericalError(MeanFieldError):
    """
    Exception for failures of a numerical procedure.
    """

    def __init__(self, message: str, error_code: str = "NUMERICAL_ERROR", details: Dict[str, Any] = None):
        super().__init__(message, error_code, details)


class SingularityError(NumericalError):
    """
    Exception raised when the exact Coulomb kernel is evaluated at a coincident pair.
    """

    def __init__(self, message: str, error_code: str = "SINGULARITY_ERROR", details: Dict[str, Any] = None):
        super().__init__(message, error_code, details)


class StepSizeError(NumericalError):
    """
    Exception raised when a time step moves a particle further than the drift cap allows.
    """

    def __init__(self, message: str, error_code: str = "STEP_SIZE_ERROR", details: Dict[str, Any] = None):
        super().__init__(message, error_code, details)


class SolverError(NumericalError):
    """
    Exception for the radial PDE solver (CFL violation, blow-up monitor trip).
    """

    def __init__(self, message: str, error_code: str = "SOLVER_ERROR", details: Dict[str, Any] = None):
        super().__init__(message, error_code, details)


class UnavailableError(MeanFieldError):
    """
    Exception raised when a quantity needs data the run did not retain.
    """

    def __init__(self, message: str, error_code: str = "UNAVAILABLE_ERROR", details: Dict[str, Any] = None):
        super().__init__(message, error_code, details)


class PersistenceError(MeanFieldError):
    """
    Exception for result-file read/write failures.
    """

    def __init__(self, message: str, error_code: str = "IO_ERROR", details: Dict[str, Any] = None):
        super().__init__(message, error_code, details)


# Map error codes to CLI exit codes
EXIT_CODE_MAP = {
    "CONFIG_ERROR": 2,
    "VALIDATION_ERROR": 2,
    "NUMERICAL_ERROR": 3,
    "SINGULARITY_ERROR": 3,
    "STEP_SIZE_ERROR": 3,
    "SOLVER_ERROR": 3,
    "UNAVAILABLE_ERROR": 3,
    "IO_ERROR": 4,
    "UNKNOWN_ERROR": 1
}


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception raised during a run to the documented CLI exit code.

    Args:
        exc: Exception that ended the run

    Returns:
        Exit code (2 config/validation, 3 numerical, 4 IO, 1 anything else)
    """
    if isinstance(exc, MeanFieldError):
        return EXIT_CODE_MAP.get(exc.error_code, 1)

    # pydantic is imported lazily so this module stays importable on its own
    try:
        from pydantic import ValidationError as PydanticValidationError
        if isinstance(exc, PydanticValidationError):
            return 2
    except ImportError:  # pragma: no cover
        pass

    if isinstance(exc, OSError):
        return 4

    return 1


def describe_error(exc: BaseException) -> Dict[str, Any]:
    """
    Create a standardized error payload for logs and the run manifest.
    """
    if isinstance(exc, MeanFieldError):
        return {
            "error": {
                "message": exc.message,
                "code": exc.error_code,
                "details": exc.details
            },
            "status": "error"
        }

    logger.error(
        f"Unhandled exception: {str(exc)}",
        extra={"exception_type": type(exc).__name__},
        exc_info=exc
    )
    return {
        "error": {
            "message": str(exc),
            "code": "INTERNAL_ERROR",
            "details": {"exception_type": type(exc).__name__}
        },
        "status": "error"
    }
