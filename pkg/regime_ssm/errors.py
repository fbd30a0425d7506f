"""
Exception hierarchy for regime_ssm.

Argument preconditions (wrong shapes, T < 1, bad config values) raise plain
``ValueError``. Everything else derives from :class:`RegimeSSMError` and carries
the exit code the CLI maps it to.
"""

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:  # pragma: no cover
    from .core.model import ValidationReport


class RegimeSSMError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ModelValidationError(RegimeSSMError, ValueError):
    """A model failed :func:`regime_ssm.core.model.validate_model`."""

    exit_code = 2

    def __init__(self, report: "ValidationReport"):
        self.report = report
        lines = [f"  - {v}" for v in report.violations]
        super().__init__(
            f"model validation failed with {len(report.violations)} violation(s):\n"
            + "\n".join(lines)
        )


class NumericalError(RegimeSSMError, ArithmeticError):
    """A linear-algebra or probability computation could not be completed."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        time_index: Optional[int] = None,
        regime: Optional[int] = None,
        iteration: Optional[int] = None,
    ):
        self.message = message
        self.time_index = time_index
        self.regime = regime
        self.iteration = iteration
        context = []
        if time_index is not None:
            context.append(f"t={time_index}")
        if regime is not None:
            context.append(f"regime={regime}")
        if iteration is not None:
            context.append(f"iteration={iteration}")
        suffix = f" ({', '.join(context)})" if context else ""
        super().__init__(f"{message}{suffix}")

    def with_context(
        self,
        time_index: Optional[int] = None,
        regime: Optional[int] = None,
        iteration: Optional[int] = None,
    ) -> "NumericalError":
        """Return a copy with missing context fields filled in."""
        return NumericalError(
            self.message,
            time_index=self.time_index if self.time_index is not None else time_index,
            regime=self.regime if self.regime is not None else regime,
            iteration=self.iteration if self.iteration is not None else iteration,
        )


class PathCapExceededError(RegimeSSMError):
    """Exact enumeration would exceed the configured number of regime paths."""

    exit_code = 2

    def __init__(self, num_paths: int, max_paths: int):
        self.num_paths = num_paths
        self.max_paths = max_paths
        super().__init__(
            f"exact enumeration needs {num_paths} paths, cap is {max_paths}"
        )


class UnsortedRecordsError(RegimeSSMError, ValueError):
    """Flow records were not sorted by timestamp."""

    exit_code = 2

    def __init__(self, index: int, previous: float, current: float):
        self.index = index
        super().__init__(
            f"flow records must be sorted by timestamp: record {index} has "
            f"t={current} after t={previous}"
        )
