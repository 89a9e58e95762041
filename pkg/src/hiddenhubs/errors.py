"""Exception types shared across the toolkit."""


class HubsError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(HubsError, ValueError):
    """Invalid or inconsistent problem parameters."""


class RegimeError(HubsError, ValueError):
    """Parameters fall outside the regime an operation is defined for."""


class NumericError(HubsError, ArithmeticError):
    """Quadrature failure, overflow or another numerical breakdown."""


class OracleError(HubsError):
    """A statistical oracle cannot be simulated honestly at the requested tolerance."""
