"""Exception hierarchy shared across the package."""


class PolydivError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PolydivError, ValueError):
    """Structurally invalid model parameters or arguments."""


class InadmissibleParamsError(PolydivError, ValueError):
    """Parameters violate the inward-pointing drift conditions."""


class DomainError(PolydivError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ConfigError(PolydivError, ValueError):
    """Malformed configuration file."""


class MarketDataError(PolydivError, ValueError):
    """Malformed or inconsistent market data."""


class NumericError(PolydivError, ArithmeticError):
    """Non-finite values or other numerical breakdown."""


class ConvergenceError(NumericError):
    """Iterative solver failed to converge within its budget."""


class InfeasibleMomentsError(PolydivError, ValueError):
    """Moment sequence is not realizable by a density on [0, inf)."""


class CalibrationError(PolydivError, RuntimeError):
    """Calibration failed to produce an admissible parameter set."""
