"""
Exception types raised by the services. Most derive from ValueError so callers
that only know about ValueError keep working.
"""


class CoopSchedError(Exception):
    """Base class for every error raised by coopsched."""


class ConfigError(CoopSchedError, ValueError):
    """Invalid configuration file or request payload."""


class DomainError(CoopSchedError, ValueError):
    """Mathematical precondition violated (r <= 0, beta >= 1, non-PSD input...)."""


class GuardExceededError(CoopSchedError, ValueError):
    """Exhaustive enumeration asked for more candidates than allowed."""


class NotChordalError(CoopSchedError, ValueError):
    """Clique listing requested on a graph that is not chordal."""


class BruteForceLimitError(CoopSchedError, ValueError):
    """Exponential oracle asked to handle too many vertices."""


class PropertyViolation(CoopSchedError, RuntimeError):
    """An acceptance property (gap bound, drift recursion...) failed."""
