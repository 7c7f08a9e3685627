"""Exception types raised across the toolkit."""


class ScenefuseError(Exception):
    """Base class for all toolkit errors."""


class PipelineError(ScenefuseError):
    """Invalid input to a feature-pipeline operation."""


class ExtractionError(ScenefuseError):
    """A stream extractor failed; the message names the failing stream."""


class ModelAssetError(ScenefuseError):
    """Backbone asset problem: missing file, bad checksum, wrong graph."""


class ImageError(ScenefuseError):
    """An image could not be decoded or has no pixels."""


class SolverError(ScenefuseError):
    """Classifier training failed (degenerate data or non-convergence)."""


class ConvergenceError(SolverError):
    """Solver hit the iteration cap; carries the final gradient norm."""

    def __init__(self, message: str, gradient_norm: float):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class ManifestError(ScenefuseError):
    """Malformed sample manifest; messages cite line numbers."""


class StoreError(ScenefuseError):
    """Feature-store file is corrupt, truncated, or inconsistent."""


class PlanError(ScenefuseError):
    """Experiment plan is inconsistent or missing prerequisites."""
