"""Newline-delimited JSON transports: child-process stdio and HTTP POST.

Wire request::

    {"id": 7, "kind": "asr", "utterance_id": "...", "payload": {...}}

Wire response (``id`` echoed when the request carried one)::

    {"id": 7, "kind": "asr", "utterance_id": "...", "result": {...}}
    {"id": 7, "kind": "asr", "utterance_id": "...", "error": "message"}

The HTTP transport posts one request object per call and reads one
response object back; the schemas are identical.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import subprocess
import threading
import time
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Mapping, Sequence, TextIO

from .protocol import (
    BackendError,
    BackendRequest,
    BackendTimeout,
    SchemaError,
    validate_payload,
    validate_result,
)

log = logging.getLogger(__name__)


def _unwrap(msg: Any, request: BackendRequest) -> Mapping[str, Any]:
    if not isinstance(msg, dict):
        raise SchemaError("response: expected a JSON object")
    if "error" in msg:
        raise BackendError(f"{request.kind.value} backend error: {msg['error']}")
    for name in ("utterance_id", "result"):
        if name not in msg:
            raise SchemaError(f"response: missing required field '{name}'", field=name)
    if msg["utterance_id"] != request.utterance_id:
        raise SchemaError(
            f"response: utterance_id {msg['utterance_id']!r} does not echo {request.utterance_id!r}",
            field="utterance_id",
        )
    return msg["result"]


class StdioBackend:
    """Talks to a long-lived child process, one request at a time."""

    def __init__(self, argv: Sequence[str]):
        self.argv = list(argv)
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._lock = threading.Lock()
        self._next_id = 0

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._lines = queue.Queue()
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1,
            )
            lines = self._lines

            def pump(stream: TextIO) -> None:
                for line in stream:
                    lines.put(line)
                lines.put(None)

            threading.Thread(target=pump, args=(self._proc.stdout,), daemon=True).start()
        return self._proc

    def __call__(self, request: BackendRequest, timeout_s: float) -> Mapping[str, Any]:
        with self._lock:
            proc = self._ensure_started()
            self._next_id += 1
            rid = self._next_id
            try:
                proc.stdin.write(json.dumps({"id": rid, **request.to_wire()}, ensure_ascii=False) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise BackendError(f"backend process unavailable: {exc}") from exc
            deadline = time.monotonic() + timeout_s
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BackendTimeout(f"no response within {timeout_s:.3f}s")
                try:
                    line = self._lines.get(timeout=remaining)
                except queue.Empty:
                    raise BackendTimeout(f"no response within {timeout_s:.3f}s") from None
                if line is None:
                    raise BackendError("backend process exited")
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    raise SchemaError("response: malformed JSON") from None
                if isinstance(msg, dict) and msg.get("id") not in (None, rid):
                    continue  # late answer to a request that already timed out
                return _unwrap(msg, request)

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None


class HttpBackend:
    def __init__(self, url: str):
        self.url = url

    def __call__(self, request: BackendRequest, timeout_s: float) -> Mapping[str, Any]:
        body = json.dumps(request.to_wire(), ensure_ascii=False).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=timeout_s) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", "replace")
            try:
                return _unwrap(json.loads(detail), request)
            except (json.JSONDecodeError, SchemaError):
                raise BackendError(f"HTTP {exc.code}: {detail[:200]}") from None
        except (socket.timeout, TimeoutError) as exc:
            raise BackendTimeout(str(exc)) from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise BackendTimeout(str(exc.reason)) from exc
            raise BackendError(f"cannot reach {self.url}: {exc.reason}") from exc
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError:
            raise SchemaError("response: malformed JSON") from None
        return _unwrap(msg, request)

    def close(self) -> None:
        pass


Handler = Callable[[BackendRequest, float], Mapping[str, Any]]


def handle_wire(backend: Handler, msg: Any) -> dict:
    """Serve one decoded wire request, turning failures into error replies."""
    reply: dict[str, Any] = {}
    if isinstance(msg, dict):
        for key in ("id", "kind", "utterance_id"):
            if key in msg:
                reply[key] = msg[key]
    try:
        if not isinstance(msg, dict):
            raise SchemaError("request: expected a JSON object")
        request = BackendRequest.from_wire(msg)
        validate_payload(request.kind, request.payload)
        result = dict(backend(request, float("inf")))
        validate_result(request.kind, result)
        reply["result"] = result
    except Exception as exc:  # noqa: BLE001 - reported to the client
        reply["error"] = str(exc)
    return reply


def serve_stdio(backend: Handler, stdin: TextIO, stdout: TextIO) -> None:
    for line in stdin:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            msg = None
        reply = handle_wire(backend, msg) if msg is not None else {"error": "malformed JSON"}
        stdout.write(json.dumps(reply, ensure_ascii=False) + "\n")
        stdout.flush()


def make_http_server(backend: Handler, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class _Handler(BaseHTTPRequestHandler):
        def do_POST(self) -> None:  # noqa: N802
            length = int(self.headers.get("Content-Length", 0))
            try:
                msg = json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                msg = None
            reply = handle_wire(backend, msg) if msg is not None else {"error": "malformed JSON"}
            body = json.dumps(reply, ensure_ascii=False).encode("utf-8")
            self.send_response(200 if "result" in reply else 400)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt: str, *args: Any) -> None:
            log.debug(fmt, *args)

    server = ThreadingHTTPServer((host, port), _Handler)
    server.daemon_threads = True
    return server
