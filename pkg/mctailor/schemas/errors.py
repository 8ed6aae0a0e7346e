"""
mctailor Errors

Exception hierarchy shared by every module.
Library code raises; only the CLI maps an error to its process exit code.
"""

from __future__ import annotations
from typing import Any, Dict, Optional


class MCTailorError(Exception):
    """Base error with a stable code and an exit status."""

    exit_code: int = 2

    def __init__(
        self,
        code: str,
        message: str,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.code = code
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}


class UsageError(MCTailorError):
    """Malformed command line or configuration."""
    exit_code = 1


class DataError(MCTailorError):
    """Unreadable, empty or inconsistent input data or artifacts."""
    exit_code = 2


class TrainingDivergedError(DataError):
    """Non-finite loss during estimator training."""


class EnumerationGuardError(DataError):
    """Oracle enumeration would exceed the sequence guard."""


class StarvationError(MCTailorError):
    """A sampler accepts too rarely to make progress."""
    exit_code = 3


class BudgetExceededError(StarvationError):
    """Proposal budget exhausted before the requested sample count."""


class VerificationError(MCTailorError):
    """An oracle invariant was breached."""
    exit_code = 4
