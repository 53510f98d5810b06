"""Semantic exception hierarchy.

Public functions raise these instead of bare ValueError so callers (and the
command-line runner) can map failure classes to distinct exit codes.
"""


class WelfarelensError(Exception):
    """Base error for the package."""


class ConfigError(WelfarelensError, ValueError):
    """Invalid specification or configuration (bad field, unknown key, n = 0, ...)."""


class DataValidationError(WelfarelensError, ValueError):
    """Input data violates a contract (non-binary treatment, empty arm, bad range, ...)."""


class EnumerationCapError(WelfarelensError, RuntimeError):
    """A policy enumeration would exceed the configured policy-row evaluation cap."""


class ConvergenceError(WelfarelensError, RuntimeError):
    """An iterative solver failed to converge and the caller required convergence."""
