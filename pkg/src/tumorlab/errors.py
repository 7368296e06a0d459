"""Shared exception types.

The CLI maps these onto exit codes: solver failures exit 2, configuration
problems exit 3, and a failed experiment inequality exits 1.
"""


class SolverError(RuntimeError):
    """A numerical solve failed to converge or hit an invalid regime."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class GridMismatchError(ValueError):
    """Two fields that must share a grid do not."""


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""


class ExperimentFailure(RuntimeError):
    """An experiment inequality was violated (distinct from a solver crash)."""
