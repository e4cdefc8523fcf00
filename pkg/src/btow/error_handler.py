#!/usr/bin/env python3
"""
Error Handling for the biased tug-of-war toolkit

This module defines the error hierarchy shared by all components and the
handler that logs failures and maps them to process exit codes.
"""

import traceback
from pathlib import Path
from typing import Any, Optional, Dict, List
import logging
from enum import Enum
from datetime import datetime

from .utils import read_json_safe, to_jsonable, write_json_safe


EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NONCONVERGENCE = 2
EXIT_PROPERTY = 3
EXIT_INTERNAL = 4
EXIT_SIMULATION = 5


class ErrorSeverity(Enum):
    """Error severity levels."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class BtowError(Exception):
    """Base exception for toolkit errors."""

    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, severity: ErrorSeverity = ErrorSeverity.MEDIUM,
                 context: Optional[Dict] = None):
        super().__init__(message)
        self.severity = severity
        self.context = context or {}
        self.timestamp = datetime.now()


class ValidationError(BtowError):
    """A parameter violates the precondition of an operation."""

    def __init__(self, message: str, context: Optional[Dict] = None):
        super().__init__(message, ErrorSeverity.HIGH, context)


class ConfigurationError(ValidationError):
    """Error in configuration files or command-line settings."""
    pass


class SpaceError(ValidationError):
    """Invalid space description (disconnected graph, bad boundary, ...)."""
    pass


class BiasError(ValidationError):
    """Invalid odds or bias parameters."""
    pass


class ConvergenceError(BtowError):
    """Fixed-point iteration did not reach the tolerance."""

    exit_code = EXIT_NONCONVERGENCE

    def __init__(self, message: str, residual: float, sweeps: int,
                 context: Optional[Dict] = None):
        context = dict(context or {}, residual=residual, sweeps=sweeps)
        super().__init__(message, ErrorSeverity.HIGH, context)
        self.residual = residual
        self.sweeps = sweeps


class ConsistencyError(BtowError):
    """An internal invariant was broken (e.g. a non-monotone sweep)."""

    exit_code = EXIT_INTERNAL

    def __init__(self, message: str, context: Optional[Dict] = None):
        super().__init__(message, ErrorSeverity.CRITICAL, context)


class PropertyCheckError(BtowError):
    """A verified property failed; witnesses are attached."""

    exit_code = EXIT_PROPERTY

    def __init__(self, message: str, witnesses: Optional[List[Dict[str, Any]]] = None,
                 context: Optional[Dict] = None):
        super().__init__(message, ErrorSeverity.MEDIUM, context)
        self.witnesses = witnesses or []


class SimulationError(BtowError):
    """Playouts could not be completed as requested."""

    exit_code = EXIT_SIMULATION

    def __init__(self, message: str, context: Optional[Dict] = None):
        super().__init__(message, ErrorSeverity.HIGH, context)


class ErrorHandler:
    """Centralized error logging and exit-code mapping."""

    def __init__(self, config=None, error_log_file: Optional[Path] = None):
        """Initialize the error handler with configuration."""
        self.config = config
        self.logger = logging.getLogger(__name__)
        if error_log_file is None and config is not None:
            error_log_file = Path(config.output_dir) / "error_log.json"
        self.error_log_file = error_log_file

    def handle_error(self, error: Exception, context: Optional[Dict] = None) -> int:
        """
        Log an error and decide the process exit code.

        Args:
            error: The exception that occurred
            context: Additional context information

        Returns:
            int: Exit code for the run
        """
        try:
            self._log_error(error, context)
        except Exception as e:
            self.logger.critical(f"Error in error handler: {e}")
        return self.exit_code_for(error)

    @staticmethod
    def exit_code_for(error: Exception) -> int:
        """Map an exception to the run's exit code."""
        if isinstance(error, BtowError):
            return error.exit_code
        # Plain ValueErrors come from configuration parsing
        return EXIT_VALIDATION

    def _log_error(self, error: Exception, context: Optional[Dict] = None) -> None:
        """Log error details to file and logger."""
        error_info = {
            "timestamp": datetime.now().isoformat(),
            "error_type": type(error).__name__,
            "message": str(error),
            "traceback": traceback.format_exc(),
            "context": context or {}
        }

        if isinstance(error, BtowError):
            error_info.update({
                "severity": error.severity.value,
                "exit_code": error.exit_code,
                "error_context": to_jsonable(error.context)
            })
            if isinstance(error, PropertyCheckError):
                error_info["witnesses"] = to_jsonable(error.witnesses[:20])

        if self.error_log_file is not None:
            self._append_error_log(error_info)

        if isinstance(error, BtowError):
            if error.severity == ErrorSeverity.CRITICAL:
                self.logger.critical(f"Critical error: {error}")
            elif error.severity == ErrorSeverity.HIGH:
                self.logger.error(f"{type(error).__name__}: {error}")
            elif error.severity == ErrorSeverity.MEDIUM:
                self.logger.warning(f"{type(error).__name__}: {error}")
            else:
                self.logger.info(f"{type(error).__name__}: {error}")
        else:
            self.logger.error(f"Unhandled error: {error}")
            self.logger.debug(f"Error traceback: {traceback.format_exc()}")

    def _append_error_log(self, error_info: Dict) -> None:
        """Append error information to the error log file."""
        try:
            log_data = read_json_safe(self.error_log_file, {"errors": []}, self.logger)
            log_data["errors"].append(error_info)

            # Keep only last 100 errors
            if len(log_data["errors"]) > 100:
                log_data["errors"] = log_data["errors"][-100:]

            write_json_safe(self.error_log_file, log_data, self.logger)

        except Exception as e:
            self.logger.warning(f"Failed to write error log: {e}")

