"""Exception hierarchy shared across the package.

Each error class carries the CLI exit code used when it escapes to the
command-line layer.
"""


class CausalmeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CausalmeError):
    """Invalid configuration or malformed input."""

    exit_code = 2


class GraphError(ConfigError):
    """Structurally invalid graph (cycle, bad endpoint, self-edge)."""


class AmbiguityError(CausalmeError):
    """A decision rule found ties it refuses to break silently."""

    exit_code = 3

    def __init__(self, message, candidates=None):
        super().__init__(message)
        self.candidates = list(candidates) if candidates is not None else []


class InconsistencyError(CausalmeError):
    """Inputs are mutually inconsistent with the model class."""

    exit_code = 4


class ConvergenceError(CausalmeError):
    """An iterative estimator hit its iteration cap; carries the best iterate."""

    exit_code = 5

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
