"""Exception types shared across the package."""

from __future__ import annotations


class FiltraError(Exception):
    """Base class for all library errors."""


class DimensionError(FiltraError):
    """Operands do not live on the same grid or have mismatched shapes."""


class DegeneratePredictorError(FiltraError):
    """A predictor has no sample variation and cannot be standardized."""

    def __init__(self, predictor: int):
        self.predictor = predictor
        super().__init__(f"predictor {predictor} has zero total variation")


class ConvergenceError(FiltraError):
    """An iterative solver failed to converge; carries its last state."""

    def __init__(self, message: str, last_iterate=None, objective_trace=None):
        self.last_iterate = last_iterate
        self.objective_trace = list(objective_trace) if objective_trace is not None else []
        super().__init__(message)


class EvaluationError(FiltraError):
    """Too many resampling splits failed during candidate evaluation."""


class SelectionError(FiltraError):
    """No candidate survived evaluation."""


class ExperimentError(FiltraError):
    """Too many replications failed inside the experiment harness."""


class SchemaError(FiltraError):
    """A CSV or JSON artifact does not match its expected schema."""
