"""Exception types shared across the toolkit."""


class FinrigError(Exception):
    """Base class for toolkit errors."""


class SlitViolation(FinrigError):
    """A fiber vector is (numerically) zero where a nonzero one is required."""


class OutsideChart(FinrigError):
    """A base point left the declared chart box or entered the excluded region."""


class MetricDegenerate(FinrigError):
    """The fundamental tensor failed to be positive definite / invertible.

    This is a diagnostic, not an abort: scans record the point and continue.
    """


class ChartExit(FinrigError):
    """An integrated trajectory left the chart; carries the approximate exit time."""

    def __init__(self, t_exit, message=None):
        super().__init__(message or f"trajectory left the chart near t={t_exit:.6g}")
        self.t_exit = t_exit


class StepLimitExceeded(FinrigError):
    """The adaptive integrator hit its step budget before reaching the target time."""


class ConsistencyError(FinrigError):
    """An internal invariant was violated (e.g. certified rank exceeding 2n-1)."""


class ConfigError(FinrigError):
    """Invalid run configuration, CLI arguments, or expression syntax."""
