"""
Error hierarchy shared by every service.

Commands map MissingArtifactError to exit code 2 and every other LabError to exit code 1.
"""


class LabError(Exception):
    """Base class for all domain failures raised by the laboratory."""


class DatasetLoadError(LabError, ValueError):
    """Episode file could not be parsed or violates a trajectory-data invariant."""

    def __init__(self, message: str, path: str = None, row: int = None):
        self.path = path
        self.row = row
        parts = [message]
        if row is not None:
            parts.append(f"row {row}")
        if path is not None:
            parts.append(f"in {path}")
        super().__init__(", ".join(parts))


class DomainError(LabError, ValueError):
    """Scalar input outside the domain of a discretization rule (NaN, non-positive TTC, ...)."""


class DegenerateSeriesError(LabError, ValueError):
    """Series has zero variance, so its autocorrelation is undefined."""


class ClusteringError(LabError, ValueError):
    """k-means preconditions failed or semantic labels could not be assigned."""


class DbnError(LabError, ValueError):
    """Invalid DBN structure, data or query."""


class InconsistentEvidenceError(DbnError):
    """Evidence has zero marginal probability under the model."""


class DocumentParseError(LabError, ValueError):
    """Text artifact (DBN document, weights file) is malformed or fails validation on read."""


class GraphError(LabError, ValueError):
    """Graph snapshot cannot be built from the given states."""


class ShapeError(LabError, ValueError):
    """Array shapes are incompatible."""


class TrainingError(LabError):
    """Non-finite loss or divergence during training."""


class ScenarioConfigError(LabError, ValueError):
    """Scenario configuration is inconsistent."""


class MissingArtifactError(LabError):
    """A prerequisite file (dataset, frames, DBN document, weights) is absent."""
