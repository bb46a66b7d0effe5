"""
Exception hierarchy for the planning stack.

Numeric and domain errors also subclass the built-in they refine, so callers
that only catch ValueError / RuntimeError / OSError keep working.
"""

from typing import Optional


class PlannerError(Exception):
    """Root of every error raised by this project."""

    exit_code = 1


class DomainError(PlannerError, ValueError):
    """A scalar or index lies outside its mathematical domain."""

    exit_code = 3


class SizeError(PlannerError, ValueError):
    """An input sequence is empty or shorter than an operation requires."""

    exit_code = 3


class ConfigurationError(PlannerError, ValueError):
    """A configuration value is invalid or inconsistent."""

    exit_code = 3


class SequenceError(PlannerError, ValueError):
    """A token sequence violates the command/BEV/trajectory layout or length."""

    exit_code = 3


class ValidationError(PlannerError):
    """Artifacts on disk do not match the active configuration."""

    exit_code = 3


class UsageError(PlannerError):
    """Unknown mode, scheme or subcommand argument."""

    exit_code = 2


class DatasetIOError(PlannerError, OSError):
    """File system failure, always reported with the offending path."""

    exit_code = 4

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} (path: {path})" if path else message)


class TrainingError(PlannerError, RuntimeError):
    """Training produced a non-finite loss."""

    exit_code = 5

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        self.diagnostics = diagnostics or {}
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} [{details}]" if details else message)


class InternalError(PlannerError, RuntimeError):
    """An internal numeric invariant was broken."""

    exit_code = 5


class PosttuneError(PlannerError):
    """A post-tuning stage failed; `stage` names which one."""

    exit_code = 5

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"post-tuning failed in stage '{stage}': {cause}")
