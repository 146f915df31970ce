"""Local HTTP server exposing a scripted backend over the completions protocol.

Serves POST /v1/completions from a GapModelSpec so the HTTP client, the
CLI, and end-to-end tests can run against a deterministic model stand-in.
Response bodies contain no timestamps; identical requests always produce
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import signal
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .backends import COMPLETIONS_PATH, GapModelSpec, MockBackend
from .types import AnswerDistribution

logger = logging.getLogger(__name__)


def completion_payload(dist: AnswerDistribution, prompt: str) -> dict[str, Any]:
    """Render a distribution as an OpenAI-style completion response body."""
    first = dist.candidates[0]
    return {
        "id": "cmpl-" + hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12],
        "object": "text_completion",
        "created": 0,
        "model": "gap-mock",
        "choices": [
            {
                "index": 0,
                "text": dist.greedy_completion,
                "finish_reason": "stop",
                "logprobs": {
                    "tokens": [first.token_text],
                    "token_logprobs": [first.logprob],
                    "top_logprobs": [{c.token_text: c.logprob for c in dist.candidates}],
                    "text_offset": [0],
                },
            }
        ],
    }


def _validate_request(body: Any) -> str | None:
    if not isinstance(body, dict):
        return "request body must be a JSON object"
    prompt = body.get("prompt")
    if not isinstance(prompt, str):
        return "field 'prompt' must be a string"
    logprobs = body.get("logprobs")
    if isinstance(logprobs, bool) or not isinstance(logprobs, int) or logprobs < 1:
        return "field 'logprobs' must be an integer >= 1"
    max_tokens = body.get("max_tokens")
    if isinstance(max_tokens, bool) or not isinstance(max_tokens, int) or max_tokens < 1:
        return "field 'max_tokens' must be an integer >= 1"
    temperature = body.get("temperature")
    if isinstance(temperature, bool) or not isinstance(temperature, (int, float)):
        return "field 'temperature' must be a number"
    if temperature != 0:
        return "field 'temperature' must be 0.0 (this server only decodes greedily)"
    return None


class MockCompletionHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "MockCompletionServer"

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        if self.path != COMPLETIONS_PATH:
            self._send_json(404, {"error": {"message": f"unknown path {self.path}", "type": "invalid_request_error"}})
            return
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except ValueError:
            self._send_json(400, {"error": {"message": "request body is not valid JSON", "type": "invalid_request_error"}})
            return
        problem = _validate_request(body)
        if problem is not None:
            self._send_json(400, {"error": {"message": problem, "type": "invalid_request_error"}})
            return
        dist = self.server.backend.complete(
            body["prompt"], top_k=body["logprobs"], max_tokens=body["max_tokens"]
        )
        self._send_json(200, completion_payload(dist, body["prompt"]))

    def _send_json(self, status: int, payload: dict[str, Any]) -> None:
        data = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt: str, *args: Any) -> None:
        logger.debug("%s - %s", self.address_string(), fmt % args)


class MockCompletionServer(ThreadingHTTPServer):
    """Threaded HTTP server backed by a MockBackend; stateless per request."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(
        self,
        spec: GapModelSpec,
        host: str = "127.0.0.1",
        port: int = 0,
        probe_position: int = 0,
    ) -> None:
        self.backend = MockBackend(spec, probe_position=probe_position)
        super().__init__((host, port), MockCompletionHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    @property
    def endpoint(self) -> str:
        host = self.server_address[0]
        return f"http://{host}:{self.port}"


def serve_until_signal(server: MockCompletionServer) -> int:
    """Serve forever; SIGINT/SIGTERM trigger a clean shutdown and exit 0."""

    def request_shutdown(signum: int, _frame: Any) -> None:
        logger.info("signal %d received, shutting down", signum)
        # shutdown() blocks until the serve loop exits, so it must not run
        # on the main thread that is inside serve_forever().
        threading.Thread(target=server.shutdown, daemon=True).start()

    previous = {
        sig: signal.signal(sig, request_shutdown) for sig in (signal.SIGINT, signal.SIGTERM)
    }
    try:
        server.serve_forever()
    finally:
        for sig, handler in previous.items():
            signal.signal(sig, handler)
        server.server_close()
    return 0
