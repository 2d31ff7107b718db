"""Exception hierarchy. Every error raised by the engine subclasses EngineError."""


class EngineError(Exception):
    pass


class DegenerateConfigurationError(EngineError):
    """Correspondences are collinear or duplicated beyond the projective scale."""


class AtInfinityError(EngineError):
    """A point maps onto the line at infinity (vanishing denominator)."""


class SingularMatrixError(EngineError):
    pass


class ParallelLinesError(EngineError):
    pass


class DegenerateQuadError(EngineError):
    pass


class FrameOrderError(EngineError):
    """Detections fed to a tracker out of frame order."""


class NumericallySingularError(EngineError):
    pass


class MalformedPgmError(EngineError):
    pass


class DimensionMismatchError(EngineError):
    pass


class NoValidPointsError(EngineError):
    """Every optical-flow seed point invalidated before the chain completed."""


class InsufficientSamplesError(EngineError):
    pass


class NonPositivePredictionError(EngineError):
    pass


class OutOfGridError(EngineError):
    pass


class TooShortTrackError(EngineError):
    pass


class NoLanesFoundError(EngineError):
    pass


class ZeroSpeedError(EngineError):
    pass


class ZeroDenominatorError(EngineError):
    pass


class DetectionParseError(EngineError):
    """Malformed detection record; carries the 1-based input line number."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class PipelineStageError(EngineError):
    """Wraps a module error with the pipeline stage it surfaced in."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
