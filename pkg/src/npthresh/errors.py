"""Exception hierarchy.

Every library error carries a stable ``code`` so the CLI can map it to an
exit status and a machine-readable message.
"""

from __future__ import annotations


class NpthreshError(Exception):
    code = "error"
    exit_status = 4

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self), "context": _jsonable(self.context)}


class DomainError(NpthreshError, ValueError):
    """Invalid argument to a numerical routine."""

    code = "domain_error"
    exit_status = 2


class DataError(NpthreshError):
    """Input data could not be read or is unusable."""

    code = "data_error"
    exit_status = 3


class EstimationError(NpthreshError):
    code = "estimation_error"


class InferenceError(NpthreshError):
    code = "inference_error"


class SearchError(NpthreshError):
    code = "search_error"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return repr(obj)
