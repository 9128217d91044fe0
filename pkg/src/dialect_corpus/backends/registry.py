"""Which backend serves which kind.

A registry file is a JSON object mapping kind names to endpoints::

    {
      "asr": "http://asr-host:8080/infer",
      "llm_correct": ["python3", "corrector_worker.py"],
      "embed": "python3 embed_worker.py --device cpu",
      "vad": "mock"
    }

A value is ``"mock"``, an ``http(s)://`` URL, or a command line (argv list
or shell-style string) for a stdio worker. ``DIALECT_CORPUS_BACKEND_<KIND>``
environment variables override file entries with the same syntax. Kinds
not mentioned anywhere fall back to the built-in mock, except ``vad``,
which is only used when configured explicitly (the built-in energy VAD is
the default).
"""

from __future__ import annotations

import json
import os
import shlex
from pathlib import Path
from typing import Any, Mapping

from .mocks import MockBackend
from .protocol import Backend, BackendKind, UnregisteredKindError
from .transports import HttpBackend, StdioBackend

ENV_PREFIX = "DIALECT_CORPUS_BACKEND_"
DEFAULT_MOCK_KINDS = tuple(k for k in BackendKind if k is not BackendKind.VAD)


class BackendRegistry:
    def __init__(self, backends: Mapping[BackendKind | str, Backend] | None = None):
        self._backends: dict[BackendKind, Backend] = {}
        for kind, backend in (backends or {}).items():
            self.register(kind, backend)

    def register(self, kind: BackendKind | str, backend: Backend) -> None:
        self._backends[BackendKind(kind)] = backend

    def has(self, kind: BackendKind | str) -> bool:
        return BackendKind(kind) in self._backends

    def get(self, kind: BackendKind | str) -> Backend:
        kind = BackendKind(kind)
        try:
            return self._backends[kind]
        except KeyError:
            raise UnregisteredKindError(f"no backend registered for kind {kind.value!r}") from None

    def close(self) -> None:
        closed = set()
        for backend in self._backends.values():
            if id(backend) not in closed and hasattr(backend, "close"):
                backend.close()
                closed.add(id(backend))

    @classmethod
    def mock(cls, seed: int = 0, kinds=DEFAULT_MOCK_KINDS, **mock_kwargs: Any) -> BackendRegistry:
        backend = MockBackend(seed, **mock_kwargs)
        return cls({kind: backend for kind in kinds})


def endpoint_backend(endpoint: Any, mock: MockBackend) -> Backend:
    if isinstance(endpoint, list):
        if not endpoint or not all(isinstance(a, str) for a in endpoint):
            raise ValueError(f"bad command line {endpoint!r}")
        return StdioBackend(endpoint)
    if not isinstance(endpoint, str) or not endpoint.strip():
        raise ValueError(f"bad endpoint {endpoint!r}")
    if endpoint == "mock":
        return mock
    if endpoint.startswith(("http://", "https://")):
        return HttpBackend(endpoint)
    return StdioBackend(shlex.split(endpoint))


def load_registry(path: str | Path | None = None, *, seed: int = 0,
                  env: Mapping[str, str] | None = None) -> BackendRegistry:
    entries: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a JSON object of kind -> endpoint")
        entries.update(data)
    env = os.environ if env is None else env
    for key, value in env.items():
        if key.startswith(ENV_PREFIX):
            entries[key[len(ENV_PREFIX):].lower()] = value
    mock = MockBackend(seed)
    registry = BackendRegistry({k: mock for k in DEFAULT_MOCK_KINDS})
    for kind, spec in entries.items():
        try:
            registry.register(BackendKind(kind), endpoint_backend(spec, mock))
        except ValueError as exc:
            raise ValueError(f"backend registry entry {kind!r}: {exc}") from None
    return registry
