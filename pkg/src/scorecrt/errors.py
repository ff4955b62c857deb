"""Typed failures raised by the testing pipeline, tagged with their stage."""

from __future__ import annotations

__all__ = [
    "PipelineError",
    "TrainingDivergedError",
    "SamplingDivergedError",
    "GofRejectionError",
]


class PipelineError(RuntimeError):
    """Base class for pipeline failures; ``stage`` names the failing stage."""

    stage = "pipeline"


class TrainingDivergedError(PipelineError):
    """Score-model training produced a non-finite loss."""

    stage = "train"


class SamplingDivergedError(PipelineError):
    """A Langevin iterate became non-finite."""

    stage = "sample"


class GofRejectionError(PipelineError):
    """Strict mode: the goodness-of-fit gate rejected the generated samples."""

    stage = "gof"
