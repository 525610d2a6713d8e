"""Exception types for MoodNet.

Every error carries a short ``category`` string that the command line prints
as ``error:<category>: <message>``.
"""


class MoodError(Exception):
    """Base class for all MoodNet errors."""
    category = "error"


class ShapeError(MoodError, ValueError):
    category = "shape"


class NonFiniteError(MoodError, ValueError):
    category = "non-finite"


class TapeError(MoodError, RuntimeError):
    category = "tape"


class MalformedHeaderError(MoodError, ValueError):
    category = "malformed-header"


class UnsupportedEncodingError(MoodError, ValueError):
    category = "unsupported-encoding"


class EmptyAudioError(MoodError, ValueError):
    category = "empty-audio"


class SampleRateError(MoodError, ValueError):
    category = "wrong-sample-rate"


class OverLengthError(MoodError, ValueError):
    category = "over-length"


class EmptyCorpusError(MoodError, ValueError):
    category = "empty-corpus"


class ZeroVarianceError(MoodError, ValueError):
    category = "zero-variance"


class InvalidIntervalError(MoodError, ValueError):
    category = "invalid-interval"


class MissingModalityError(MoodError, ValueError):
    category = "missing-modality"


class MissingColumnError(MoodError, ValueError):
    category = "missing-column"


class NonNumericLabelError(MoodError, ValueError):
    category = "non-numeric-label"


class DuplicateIdError(MoodError, ValueError):
    category = "duplicate-id"

    def __init__(self, msd_id: str):
        super().__init__(f"Duplicate msd_id: {msd_id}")
        self.msd_id = msd_id


class ConvergenceError(MoodError, RuntimeError):
    category = "non-convergence"

    def __init__(self, message: str, violation: float):
        super().__init__(f"{message} (residual KKT violation {violation:.3e})")
        self.violation = violation


class DimensionError(MoodError, ValueError):
    category = "dimension-mismatch"


class EmptyDataError(MoodError, ValueError):
    category = "empty-data"


class DivergenceError(MoodError, RuntimeError):
    category = "divergence"

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"Loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch


class TrackSetMismatchError(MoodError, ValueError):
    category = "track-set-mismatch"

    def __init__(self, difference: set[str]):
        shown = ", ".join(sorted(difference)[:10])
        more = "" if len(difference) <= 10 else f" (+{len(difference) - 10} more)"
        super().__init__(f"Prediction sets cover different tracks: {shown}{more}")
        self.difference = difference


class UnknownVariantError(MoodError, ValueError):
    category = "unknown-variant"


class CheckpointError(MoodError, ValueError):
    category = "checkpoint"


class UsageError(MoodError, ValueError):
    category = "usage"
