from .engine import MissingParameter, Orchestrator, RunNotFound, UnknownPipeline
from .model import (
    Activity,
    ActivityRecord,
    ParamSpec,
    PipelineDefinition,
    PipelineRun,
    ValidationError,
)

__all__ = [
    "Activity",
    "ActivityRecord",
    "MissingParameter",
    "Orchestrator",
    "ParamSpec",
    "PipelineDefinition",
    "PipelineRun",
    "RunNotFound",
    "UnknownPipeline",
    "ValidationError",
]
