"""Exception taxonomy shared across the package.

Every error carries a stable machine-readable ``code`` so the CLI can emit
structured failures without string matching.
"""

from __future__ import annotations

from typing import Any, Dict


class MerlError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context = context

    def to_json(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"error": self.code, "message": str(self)}
        if self.context:
            payload["context"] = {k: _jsonable(v) for k, v in self.context.items()}
        return payload


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return repr(value)


class ConfigurationError(MerlError):
    code = "configuration_error"


class CapabilityError(MerlError):
    """A configured capability (e.g. an external text adapter) is unavailable."""

    code = "capability_error"


class BatchShapeError(MerlError):
    code = "batch_shape_error"


class BatchTooSmallError(MerlError):
    """Contrastive objectives need at least two samples per batch."""

    code = "batch_too_small"


class NumericError(MerlError):
    code = "numeric_error"


class DivergenceError(MerlError):
    """Training loss became non-finite; the last good checkpoint is retained."""

    code = "divergence"


class UnrecoverableLeadError(MerlError):
    """A signal lead has too few finite samples to support neighbor repair."""

    code = "unrecoverable_lead"


class ManifestError(MerlError):
    code = "manifest_error"


class ManifestParseError(ManifestError):
    code = "manifest_parse_error"


class VocabularyError(ManifestError):
    code = "vocabulary_error"


class KnowledgeBaseError(MerlError):
    code = "knowledge_base_error"


class ResponseParseError(MerlError):
    """An LLM response did not match the documented response grammar."""

    code = "response_parse_error"

    def __init__(self, message: str, raw_response: str = "", **context: Any):
        super().__init__(message, **context)
        self.raw_response = raw_response


class TransferMapError(MerlError):
    code = "transfer_map_error"


class CompletenessError(TransferMapError):
    """A target label is neither mapped nor listed as dropped."""

    code = "transfer_map_incomplete"


class ProtocolViolationError(MerlError):
    """An evaluation protocol guarantee was broken (e.g. frozen weights changed)."""

    code = "protocol_violation"


class ExperimentError(MerlError):
    code = "experiment_error"
