"""Exception hierarchy shared across the package.

Every error raised by groupsim derives from :class:`GroupSimError` and carries
a short machine-readable ``code`` plus the pipeline ``stage`` it surfaced in
(filled in by callers that know it).
"""

from __future__ import annotations


class GroupSimError(Exception):
    code = "error"

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def payload(self) -> dict:
        return {
            "code": self.code,
            "stage": self.stage or "unspecified",
            "message": str(self),
        }


class InvariantViolation(GroupSimError):
    code = "invariant_violation"


class UnknownFieldPath(GroupSimError):
    code = "unknown_field_path"


class DimensionMismatch(GroupSimError):
    code = "dimension_mismatch"


class FingerprintMismatch(GroupSimError):
    code = "fingerprint_mismatch"


class EmptyInput(GroupSimError):
    code = "empty_input"


class KTooLarge(GroupSimError):
    code = "k_too_large"


class EmptyDataset(GroupSimError):
    code = "empty_dataset"


class EmptyVisitorLog(GroupSimError):
    code = "empty_visitor_log"


class EmptyRegistry(GroupSimError):
    code = "empty_registry"


class RemoteUnreachable(GroupSimError):
    code = "remote_unreachable"


class EmptyCompletion(GroupSimError):
    code = "empty_completion"


class ParseFailure(GroupSimError):
    code = "parse_failure"


class UnparseableDecision(GroupSimError):
    code = "unparseable_decision"


class LengthMismatch(GroupSimError):
    code = "length_mismatch"


class TooFewPairs(GroupSimError):
    code = "too_few_pairs"


class UnknownScene(GroupSimError):
    code = "unknown_scene"


class IncompleteSession(GroupSimError):
    code = "incomplete_session"


class StageError(GroupSimError):
    """Wraps any failure with the pipeline stage it occurred in."""

    code = "stage_error"

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}", stage=stage)
        self.cause = cause
