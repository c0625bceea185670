"""Exception types shared across the package.

Every error raised by mcerf derives from McerfError so callers can catch
one base class. Names match the failure they describe, grouped by the part
of the system that raises them.
"""


class McerfError(Exception):
    """Base class for all mcerf errors."""


# corpus ingestion and index files


class MissingFile(McerfError):
    pass


class DimensionMismatch(McerfError):
    pass


class CorruptRecord(McerfError):
    pass


class EmptyBundle(McerfError):
    pass


class RaggedMatrix(McerfError):
    pass


class IoError(McerfError):
    pass


# retrieval


class DimMismatch(McerfError):
    pass


class MLessThanK(McerfError):
    pass


# keyword extraction


class EmptyQuestion(McerfError):
    pass


# vision geometry and description


class DegenerateImage(McerfError):
    pass


class InvalidFraction(McerfError, ValueError):
    pass


class UnparseableDescription(McerfError):
    pass


# backends


class BackendError(McerfError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class Timeout(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class BackendFailure(BackendError):
    pass


class MissingOfflineEmbedding(BackendError):
    pass


class MissingOfflineResponse(BackendError):
    pass


# pipelines


class PipelineFailure(McerfError):
    pass


class GuardNoImage(PipelineFailure):
    pass


class StageError(McerfError):
    """Wraps an error raised inside a pipeline, recording the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


# routing


class UnparseableRoute(McerfError):
    pass


class UnknownVariant(McerfError):
    pass


class AllRoutesUnparseable(McerfError):
    pass


class UnparseableAction(McerfError):
    pass


class BudgetExhaustedWithoutAnswer(McerfError):
    pass


# evaluation


class WrongTaskForMetric(McerfError):
    pass


class EmptySubset(McerfError):
    pass


class DatasetError(McerfError):
    pass
