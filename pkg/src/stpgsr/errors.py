"""Shared exception types.

Shape errors are raised when array dimensions disagree, domain errors when a
value is outside an operation's domain, and validation errors when input data
(files, matrices, configs) violates a documented contract.
"""


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Iterative solver failed to converge; carries the last iterate."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""
