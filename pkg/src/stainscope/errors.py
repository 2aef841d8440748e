"""Exception hierarchy for the workbench.

Every error carries a stable machine-readable ``code`` (used verbatim in the
HTTP error payloads) and a human message.
"""

from __future__ import annotations


class WorkbenchError(Exception):
    """Base class for all workbench errors."""

    code = "internal_error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__


# --- imaging ---------------------------------------------------------------

class UnsupportedFormat(WorkbenchError):
    code = "unsupported_format"


class CorruptImage(WorkbenchError):
    code = "corrupt_image"


class NoTissueFound(WorkbenchError):
    code = "no_tissue_found"


class DimensionMismatch(WorkbenchError):
    code = "dimension_mismatch"


class ValueOutOfRange(WorkbenchError):
    code = "value_out_of_range"


# --- report schema ---------------------------------------------------------

class NoJsonFound(WorkbenchError):
    code = "no_json_found"


class ParseError(WorkbenchError):
    code = "parse_error"


class MissingField(WorkbenchError):
    code = "missing_field"

    def __init__(self, name: str):
        super().__init__(f"missing required field: {name}")
        self.name = name


class InvalidGrade(WorkbenchError):
    code = "invalid_grade"


class InvalidRange(WorkbenchError):
    code = "invalid_range"


class InvalidLocation(WorkbenchError):
    code = "invalid_location"


class UnknownField(WorkbenchError):
    code = "unknown_field"


# --- prompt synthesis ------------------------------------------------------

class EmptyQuery(WorkbenchError):
    code = "empty_query"


class ClientUnreachable(WorkbenchError):
    code = "client_unreachable"


class ClientTimeout(WorkbenchError):
    code = "client_timeout"


class ProtocolError(WorkbenchError):
    code = "protocol_error"

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"unexpected reply (status {status}): {body_excerpt[:200]}")
        self.status = status
        self.body_excerpt = body_excerpt[:200]


class SynthesisFailed(WorkbenchError):
    code = "synthesis_failed"


# --- model backend ---------------------------------------------------------

class GenerationFailed(WorkbenchError):
    code = "generation_failed"


class NoJsonInOutput(WorkbenchError):
    code = "no_json_in_output"


class FieldNotInOutput(WorkbenchError):
    code = "field_not_in_output"


class SpanEmpty(WorkbenchError):
    code = "span_empty"


class SpanOutOfRange(WorkbenchError):
    code = "span_out_of_range"


class BackendNoGradients(WorkbenchError):
    code = "backend_no_gradients"


# --- xai -------------------------------------------------------------------

class WrongMode(WorkbenchError):
    code = "wrong_mode"


class NonFiniteWeights(WorkbenchError):
    code = "non_finite_weights"


class NonFiniteInput(WorkbenchError):
    code = "non_finite_input"


class UnsupportedMethod(WorkbenchError):
    code = "unsupported_method"


# --- service ---------------------------------------------------------------

class WrongState(WorkbenchError):
    code = "wrong_state"


class NotFound(WorkbenchError):
    code = "not_found"


class ReportInvalid(WorkbenchError):
    code = "report_invalid"
