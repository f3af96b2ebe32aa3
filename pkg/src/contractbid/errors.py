"""Exception hierarchy shared across the package."""


class ContractBidError(Exception):
    """Base class for all package errors."""


class ParameterError(ContractBidError, ValueError):
    """An argument is outside its admissible range."""


class ConfigurationError(ContractBidError):
    """Inputs are inconsistent with each other (missing curves, bad files)."""


class SupplyExceededError(ContractBidError, ValueError):
    """A requested supply rate is at or above the curve's upper bound."""


class InfeasibleError(ContractBidError):
    """The requirements cannot be met with the available supply."""


class SolverError(ContractBidError):
    """A numerical solver failed to converge or diverged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SizeError(ContractBidError, ValueError):
    """The problem is too large for an exhaustive method."""
