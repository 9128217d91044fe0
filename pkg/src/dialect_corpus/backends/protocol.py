"""Request/response protocol shared by every model backend.

A backend is any callable ``backend(request, timeout_s) -> dict`` that
returns the kind-specific ``result`` object. Transports (child process,
HTTP) and the in-process mocks all implement that one call. Payloads and
results are checked against the JSON schemas in :data:`PAYLOAD_SCHEMAS`
and :data:`RESULT_SCHEMAS` on both sides of the call.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Protocol, Sequence, TypeVar

import jsonschema


class BackendKind(str, Enum):
    ASR = "asr"
    LLM_CORRECT = "llm_correct"
    EMBED = "embed"
    GENDER = "gender"
    AGE = "age"
    EMOTION = "emotion"
    QUALITY = "quality"
    ALIGN = "align"
    PUNCT = "punct"
    VAD = "vad"


_SPAN = {
    "audio_path": {"type": "string"},
    "start_s": {"type": "number", "minimum": 0},
    "end_s": {"type": "number", "minimum": 0},
}
_TOKENS = {"type": "array", "items": {"type": "string", "minLength": 1}}
_EMOTION_LABELS = ["happy", "angry", "sad", "neutral", "fearful", "surprised", "disgusted"]


def _obj(properties: dict, required: Sequence[str]) -> dict:
    return {"type": "object", "properties": properties, "required": list(required)}


PAYLOAD_SCHEMAS: dict[BackendKind, dict] = {
    BackendKind.ASR: _obj({**_SPAN, "systems": {"type": "array", "items": {"type": "string"}, "minItems": 1}},
                          ["audio_path", "start_s", "end_s", "systems"]),
    BackendKind.LLM_CORRECT: _obj({
        "consensus": _TOKENS,
        "hypotheses": {"type": "array", "items": _obj({"system_id": {"type": "string"}, "tokens": _TOKENS},
                                                      ["system_id", "tokens"])},
        "prompt": {"type": "string"},
    }, ["consensus", "hypotheses", "prompt"]),
    BackendKind.EMBED: _obj(_SPAN, list(_SPAN)),
    BackendKind.GENDER: _obj(_SPAN, list(_SPAN)),
    BackendKind.AGE: _obj(_SPAN, list(_SPAN)),
    BackendKind.EMOTION: _obj(_SPAN, list(_SPAN)),
    BackendKind.QUALITY: _obj({**_SPAN, "snr_db": {"type": "number"}, "duration_s": {"type": "number"}},
                              [*_SPAN, "snr_db", "duration_s"]),
    BackendKind.ALIGN: _obj({**_SPAN, "tokens": _TOKENS}, [*_SPAN, "tokens"]),
    BackendKind.PUNCT: _obj({"tokens": _TOKENS}, ["tokens"]),
    BackendKind.VAD: _obj({"audio_path": {"type": "string"}}, ["audio_path"]),
}

RESULT_SCHEMAS: dict[BackendKind, dict] = {
    BackendKind.ASR: _obj({"hypotheses": {"type": "array", "items": _obj(
        {"system_id": {"type": "string"}, "text": {"type": "string"}}, ["system_id", "text"])}},
        ["hypotheses"]),
    BackendKind.LLM_CORRECT: _obj({"tokens": _TOKENS}, ["tokens"]),
    BackendKind.EMBED: _obj({"vector": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                             "multi_speaker": {"type": "boolean"}}, ["vector", "multi_speaker"]),
    BackendKind.GENDER: _obj({"label": {"enum": ["male", "female", "unknown"]}}, ["label"]),
    BackendKind.AGE: _obj({"age_years": {"type": ["number", "null"], "minimum": 0, "maximum": 120}},
                          ["age_years"]),
    BackendKind.EMOTION: _obj({"predictions": {"type": "array", "items": {"enum": _EMOTION_LABELS}}},
                              ["predictions"]),
    BackendKind.QUALITY: _obj({"score": {"type": "number"}}, ["score"]),
    BackendKind.ALIGN: _obj({"words": {"type": "array", "items": _obj({
        "token": {"type": "string"}, "start_s": {"type": "number"}, "end_s": {"type": "number"},
        "pause_after_s": {"type": "number", "minimum": 0}}, ["token", "start_s", "end_s"])}}, ["words"]),
    BackendKind.PUNCT: _obj({"candidates": {"type": "array", "items": _obj({
        "position": {"type": "integer", "minimum": 0},
        "mark": {"enum": ["comma", "period", "question", "exclamation"]}}, ["position", "mark"])}},
        ["candidates"]),
    BackendKind.VAD: _obj({"regions": {"type": "array", "items": _obj(
        {"start_s": {"type": "number"}, "end_s": {"type": "number"}}, ["start_s", "end_s"])}}, ["regions"]),
}


class BackendError(Exception):
    """Base class for backend failures."""


class BackendTimeout(BackendError):
    pass


class SchemaError(BackendError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class UnregisteredKindError(BackendError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class BackendFailure(BackendError):
    """All attempts for one request failed."""

    def __init__(self, kind: str, utterance_id: str, attempts: int, cause: BaseException):
        super().__init__(f"{kind} request for {utterance_id!r} failed after {attempts} attempt(s): {cause}")
        self.kind = kind
        self.utterance_id = utterance_id
        self.attempts = attempts
        self.cause = cause


def _check(schema: dict, obj: Any, what: str) -> None:
    validator = jsonschema.Draft7Validator(schema)
    error = jsonschema.exceptions.best_match(validator.iter_errors(obj))
    if error is None:
        return
    path = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        missing = next((name for name in error.validator_value if name not in error.instance), None)
        path.append(str(missing))
        message = f"{what}: missing required field '{'.'.join(path)}'"
    else:
        message = f"{what}: field '{'.'.join(path) or '<root>'}' {error.message}"
    raise SchemaError(message, field=".".join(path) or None)


def validate_payload(kind: BackendKind | str, payload: Any) -> None:
    kind = BackendKind(kind)
    _check(PAYLOAD_SCHEMAS[kind], payload, f"{kind.value} payload")


def validate_result(kind: BackendKind | str, result: Any) -> None:
    kind = BackendKind(kind)
    _check(RESULT_SCHEMAS[kind], result, f"{kind.value} result")


@dataclass(frozen=True)
class BackendRequest:
    kind: BackendKind
    utterance_id: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BackendKind(self.kind))

    def to_wire(self) -> dict:
        return {"kind": self.kind.value, "utterance_id": self.utterance_id, "payload": dict(self.payload)}

    @classmethod
    def from_wire(cls, obj: Mapping[str, Any]) -> BackendRequest:
        for name in ("kind", "utterance_id", "payload"):
            if name not in obj:
                raise SchemaError(f"request: missing required field '{name}'", field=name)
        try:
            kind = BackendKind(obj["kind"])
        except ValueError:
            raise SchemaError(f"request: unknown kind {obj['kind']!r}", field="kind") from None
        return cls(kind, str(obj["utterance_id"]), obj["payload"])


@dataclass(frozen=True)
class BackendResponse:
    utterance_id: str
    kind: BackendKind
    result: Mapping[str, Any]
    latency_ms: float


class Backend(Protocol):
    def __call__(self, request: BackendRequest, timeout_s: float) -> Mapping[str, Any]: ...


@dataclass(frozen=True)
class RetryPolicy:
    timeout_ms: int = 30000
    retries: int = 1


class _Registry(Protocol):
    def get(self, kind: BackendKind) -> Backend: ...


def dispatch(request: BackendRequest, registry: _Registry, policy: RetryPolicy = RetryPolicy()) -> BackendResponse:
    """Send ``request`` to its registered backend.

    Makes at most ``retries + 1`` attempts; timeouts and transport errors
    are retried, schema violations are not. When every attempt fails a
    :class:`BackendFailure` is raised for the caller's stage fallback.
    """
    backend = registry.get(request.kind)
    validate_payload(request.kind, request.payload)
    attempts = policy.retries + 1
    last: BaseException | None = None
    for attempt in range(1, attempts + 1):
        began = time.perf_counter()
        try:
            result = backend(request, policy.timeout_ms / 1000.0)
        except SchemaError:
            raise
        except BackendError as exc:
            last = exc
            continue
        except OSError as exc:
            last = exc
            continue
        latency = (time.perf_counter() - began) * 1000.0
        validate_result(request.kind, result)
        return BackendResponse(request.utterance_id, request.kind, dict(result), latency)
    raise BackendFailure(request.kind.value, request.utterance_id, attempts, last)


T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class StageFailure:
    """Stands in for the result of an item whose stage function failed."""

    index: int
    item: Any
    error: BackendError

    def __bool__(self) -> bool:
        return False


def run_stage_batch(items: Sequence[T], stage_fn: Callable[[T], R],
                    max_in_flight: int = 1) -> list[R | StageFailure]:
    """Apply ``stage_fn`` to every item with at most ``max_in_flight`` calls
    outstanding; results come back in input order.

    A :class:`BackendError` from one item becomes a :class:`StageFailure`
    in its slot and the rest of the batch carries on. Other exceptions are
    bugs and propagate.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")

    def guarded(index: int, item: T) -> R | StageFailure:
        try:
            return stage_fn(item)
        except BackendError as exc:
            return StageFailure(index, item, exc)

    if max_in_flight == 1 or len(items) <= 1:
        return [guarded(i, item) for i, item in enumerate(items)]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        futures = [pool.submit(guarded, i, item) for i, item in enumerate(items)]
        return [f.result() for f in futures]
