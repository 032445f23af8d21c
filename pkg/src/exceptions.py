"""
Custom exception classes for the SMaRt toy laboratory.

This module provides a hierarchy of exceptions for the failure modes of the
numeric substrate, the training loops and the command-line harness, with
error categorisation and detailed error context.
"""

from typing import Optional, Dict, Any, Sequence
from enum import Enum


class ErrorSeverity(Enum):
    """Error severity levels for categorizing exceptions."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Error categories for different types of failures."""
    SHAPE = "shape"
    NUMERIC = "numeric"
    CONFIGURATION = "configuration"
    CHECKPOINT = "checkpoint"
    VERIFICATION = "verification"
    IO = "io"


class LabError(Exception):
    """
    Base exception for the laboratory with enhanced error context.

    Provides common functionality for all lab exceptions including
    error categorization, severity levels and a context dictionary that
    ends up in the log line and in the CLI error message.
    """

    def __init__(self,
                 message: str,
                 category: ErrorCategory = ErrorCategory.NUMERIC,
                 severity: ErrorSeverity = ErrorSeverity.MEDIUM,
                 context: Optional[Dict[str, Any]] = None,
                 original_error: Optional[Exception] = None):
        """
        Initialize lab error.

        Args:
            message: Error message
            category: Error category for classification
            severity: Error severity level
            context: Additional error context
            original_error: Original exception that caused this error
        """
        super().__init__(message)
        self.category = category
        self.severity = severity
        self.context = context or {}
        self.original_error = original_error

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert exception to dictionary for logging/serialization.

        Returns:
            Dictionary representation of the exception
        """
        return {
            'error_type': self.__class__.__name__,
            'message': str(self),
            'category': self.category.value,
            'severity': self.severity.value,
            'context': self.context,
            'original_error': str(self.original_error) if self.original_error else None
        }


class DimensionMismatchError(LabError):
    """Operand shapes do not chain."""

    def __init__(self, message: str, expected: Optional[Sequence[int]] = None,
                 actual: Optional[Sequence[int]] = None, **kwargs):
        kwargs.setdefault('category', ErrorCategory.SHAPE)
        kwargs.setdefault('severity', ErrorSeverity.HIGH)
        if 'context' not in kwargs:
            kwargs['context'] = {}
        kwargs['context']['expected'] = tuple(expected) if expected is not None else None
        kwargs['context']['actual'] = tuple(actual) if actual is not None else None
        super().__init__(message, **kwargs)


class NonFiniteError(LabError):
    """NaN or Inf showed up in a tensor, gradient or loss."""

    def __init__(self, message: str, tensor_name: Optional[str] = None, **kwargs):
        kwargs.setdefault('category', ErrorCategory.NUMERIC)
        kwargs.setdefault('severity', ErrorSeverity.HIGH)
        if 'context' not in kwargs:
            kwargs['context'] = {}
        kwargs['context']['tensor'] = tensor_name
        super().__init__(message, **kwargs)


class MissingForwardCacheError(LabError):
    """Backward pass requested without a matching cached forward pass."""

    def __init__(self, message: str = "backward called without a cached forward pass", **kwargs):
        kwargs.setdefault('category', ErrorCategory.NUMERIC)
        kwargs.setdefault('severity', ErrorSeverity.HIGH)
        super().__init__(message, **kwargs)


class TimestepError(LabError):
    """Diffusion timestep outside the range an operation accepts."""

    def __init__(self, message: str, timestep: Optional[Any] = None, **kwargs):
        kwargs.setdefault('category', ErrorCategory.NUMERIC)
        if 'context' not in kwargs:
            kwargs['context'] = {}
        kwargs['context']['timestep'] = timestep
        super().__init__(message, **kwargs)


class ScheduleError(LabError):
    """Invalid noise schedule parameters."""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault('category', ErrorCategory.CONFIGURATION)
        kwargs.setdefault('severity', ErrorSeverity.HIGH)
        super().__init__(message, **kwargs)


class ConfigurationError(LabError):
    """Configuration related errors."""

    def __init__(self, message: str, line_number: Optional[int] = None, **kwargs):
        kwargs.setdefault('category', ErrorCategory.CONFIGURATION)
        kwargs.setdefault('severity', ErrorSeverity.CRITICAL)
        if 'context' not in kwargs:
            kwargs['context'] = {}
        kwargs['context']['line'] = line_number
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message, **kwargs)


class DivergenceError(LabError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, iteration: Optional[int] = None,
                 checkpoint_path: Optional[str] = None, **kwargs):
        kwargs.setdefault('category', ErrorCategory.NUMERIC)
        kwargs.setdefault('severity', ErrorSeverity.CRITICAL)
        if 'context' not in kwargs:
            kwargs['context'] = {}
        kwargs['context']['iteration'] = iteration
        kwargs['context']['checkpoint'] = checkpoint_path
        super().__init__(message, **kwargs)


class CheckpointError(LabError):
    """Checkpoint file is missing, truncated or malformed."""

    def __init__(self, message: str, path: Optional[str] = None, **kwargs):
        kwargs.setdefault('category', ErrorCategory.CHECKPOINT)
        kwargs.setdefault('severity', ErrorSeverity.HIGH)
        if 'context' not in kwargs:
            kwargs['context'] = {}
        kwargs['context']['path'] = path
        super().__init__(message, **kwargs)


class InvalidDistributionError(LabError):
    """Discrete distribution with bad masses or duplicate atoms."""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault('category', ErrorCategory.VERIFICATION)
        super().__init__(message, **kwargs)


class VerificationError(LabError):
    """A numerical theorem check failed."""

    def __init__(self, message: str, failed_checks: Optional[list] = None, **kwargs):
        kwargs.setdefault('category', ErrorCategory.VERIFICATION)
        kwargs.setdefault('severity', ErrorSeverity.HIGH)
        if 'context' not in kwargs:
            kwargs['context'] = {}
        kwargs['context']['failed_checks'] = failed_checks or []
        kwargs['context']['failed_count'] = len(failed_checks) if failed_checks else 0
        super().__init__(message, **kwargs)


# Convenience functions for creating common errors

def create_dimension_error(operation: str, expected: Sequence[int],
                           actual: Sequence[int]) -> DimensionMismatchError:
    """Create a dimension error naming both shapes."""
    return DimensionMismatchError(
        message=f"{operation}: expected shape {tuple(expected)}, got {tuple(actual)}",
        expected=expected,
        actual=actual
    )


def create_non_finite_error(tensor_name: str, operation: str) -> NonFiniteError:
    """Create a non-finite error naming the tensor."""
    return NonFiniteError(
        message=f"{operation}: non-finite values in {tensor_name}",
        tensor_name=tensor_name
    )


def create_config_error(key: str, details: str,
                        line_number: Optional[int] = None) -> ConfigurationError:
    """Create a configuration error with specific details."""
    return ConfigurationError(
        message=f"{key}: {details}",
        line_number=line_number,
        context={'key': key}
    )
