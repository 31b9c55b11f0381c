"""Exception taxonomy shared by all pipeline stages."""

from __future__ import annotations


class MotionWeaveError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(MotionWeaveError):
    """Caller passed arguments that cannot be acted on (bad kind, empty prompt)."""


class VocabularyError(MotionWeaveError):
    """A direction token matched none of the nine admissible labels."""

    def __init__(self, token: str):
        super().__init__(f"unknown direction token: {token!r}")
        self.token = token


class PlanParseError(MotionWeaveError):
    """Structured plan text could not be parsed; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PlanValidationError(MotionWeaveError):
    """A motion plan violates a structural invariant."""


class NodeSchemaError(MotionWeaveError):
    """A skeleton line names a node outside the fixed 10-node schema."""


class FrameRangeError(MotionWeaveError):
    """A frame index is outside the valid range for the plan."""


class ShapeError(MotionWeaveError):
    """Grid/mask dimensions or resolution tags do not line up."""


class OutOfRangeError(MotionWeaveError):
    """A shift delta exceeds the grid extent."""


class EmptyMaskError(MotionWeaveError):
    """An operation that needs occupied cells received an empty mask."""


class CharacterNotFoundError(MotionWeaveError):
    """A named character is absent from the plan, scene or mask set."""


class CapacityError(MotionWeaveError):
    """More prompt slices were requested than there are frames."""


class SceneCompileError(MotionWeaveError):
    """The toy scene compiler found no registered entity in the prompt."""

    def __init__(self, message: str, known_entities: tuple[str, ...] = ()):
        if known_entities:
            message = f"{message}; known entities: {', '.join(known_entities)}"
        super().__init__(message)
        self.known_entities = known_entities


class BackendError(MotionWeaveError):
    """A model backend (HTTP bridge or provider) failed or is unreachable."""

    def __init__(self, message: str, endpoint: str | None = None):
        if endpoint:
            message = f"{message} (endpoint: {endpoint})"
        super().__init__(message)
        self.endpoint = endpoint


class StateError(MotionWeaveError):
    """Required run artifacts are missing or inconsistent."""


class MetricUndefinedError(MotionWeaveError):
    """No transitions were evaluable, so the accuracy ratio is undefined."""


class PipelineStageError(MotionWeaveError):
    """A pipeline stage aborted; carries the stage name and the original cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
