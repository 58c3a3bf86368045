"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, infeasible design requests with 3, and numeric failures with 4.
"""


class DpcError(Exception):
    """Base class for all package errors."""


class ConfigError(DpcError):
    """Invalid scenario configuration or malformed input file."""


class PreconditionError(DpcError, ValueError):
    """An operation was called with arguments violating its contract."""


class NumericError(DpcError):
    """A numeric routine failed (eigensolver breakdown, overflow, ...)."""


class DivergenceError(NumericError):
    """A privacy series or audit sum does not converge.

    ``detail`` names the violated ratio, e.g. ``max(l, alpha) >= g``.
    """

    def __init__(self, message: str, detail: str | None = None):
        super().__init__(message)
        self.detail = detail


class InfeasibleDesignError(DpcError):
    """A noise-decay design request cannot be met.

    ``margin`` is the amount by which the feasibility inequality is
    violated (positive when infeasible).
    """

    def __init__(self, message: str, margin: float):
        super().__init__(message)
        self.margin = margin
