"""Exception hierarchy shared by every stage of the pipeline.

Each error carries a machine-readable ``reason`` and the process exit code the
command line maps it to (1 usage, 2 data/validation, 3 numeric).
"""


class AmbivoteError(Exception):
    """Base class for all pipeline errors"""

    reason = "error"
    exit_code = 2

    def __init__(self, message: str, reason: str = None):
        super().__init__(message)
        self.message = message
        if reason:
            self.reason = reason

    def to_dict(self) -> dict:
        return {"error": self.reason, "message": self.message}


class UsageError(AmbivoteError):
    reason = "usage_error"
    exit_code = 1


class DataError(AmbivoteError):
    reason = "data_error"
    exit_code = 2


class ParseError(DataError):
    reason = "parse_error"


class EmptyInputError(DataError):
    reason = "empty_input"


class AlignmentError(DataError):
    reason = "alignment_error"


class DuplicateIdError(DataError):
    reason = "duplicate_id"


class RangeError(DataError):
    reason = "range_error"


class LabelError(DataError):
    reason = "label_error"


class ShapeError(DataError):
    reason = "shape_error"


class DimensionError(DataError):
    reason = "dimension_error"


class InsufficientDataError(DataError):
    reason = "insufficient_data"


class DegenerateLabelsError(DataError):
    reason = "degenerate_labels"


class MissingCandidatesError(DataError):
    reason = "missing_candidates"


class IncompleteCommitteeError(DataError):
    reason = "incomplete_committee"


class ParameterError(DataError):
    reason = "parameter_error"


class ConfigError(DataError):
    reason = "config_error"


class NumericError(AmbivoteError):
    reason = "numeric_error"
    exit_code = 3


class NonFiniteError(NumericError):
    reason = "non_finite"


class UndefinedSimilarityError(NumericError):
    reason = "undefined_similarity"


class UnusableEnsembleError(NumericError):
    reason = "unusable_ensemble"
