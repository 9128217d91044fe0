from .mocks import MockBackend
from .protocol import (
    PAYLOAD_SCHEMAS,
    RESULT_SCHEMAS,
    Backend,
    BackendError,
    BackendFailure,
    BackendKind,
    BackendRequest,
    BackendResponse,
    BackendTimeout,
    RetryPolicy,
    SchemaError,
    StageFailure,
    UnregisteredKindError,
    dispatch,
    run_stage_batch,
    validate_payload,
    validate_result,
)
from .registry import BackendRegistry, load_registry
from .transports import HttpBackend, StdioBackend, make_http_server, serve_stdio

__all__ = [
    "PAYLOAD_SCHEMAS",
    "RESULT_SCHEMAS",
    "Backend",
    "BackendError",
    "BackendFailure",
    "BackendKind",
    "BackendRegistry",
    "BackendRequest",
    "BackendResponse",
    "BackendTimeout",
    "HttpBackend",
    "MockBackend",
    "RetryPolicy",
    "SchemaError",
    "StageFailure",
    "StdioBackend",
    "UnregisteredKindError",
    "dispatch",
    "load_registry",
    "make_http_server",
    "run_stage_batch",
    "serve_stdio",
    "validate_payload",
    "validate_result",
]
