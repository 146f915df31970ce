"""HTTP client wire conformance: golden bodies, retries, schema validation."""

from __future__ import annotations

import json
import logging
import math
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from latent_recall import (
    AnswerDistribution,
    BackendError,
    CapabilityError,
    GapModelSpec,
    HttpBackend,
    MockBackend,
    MockCompletionServer,
    ScriptedReply,
    TokenCandidate,
    WireSchemaError,
)

GOLDEN_RESPONSE = {
    "id": "cmpl-fixed",
    "object": "text_completion",
    "created": 0,
    "model": "gap-mock",
    "choices": [
        {
            "index": 0,
            "text": " Olympia is the capital.",
            "finish_reason": "stop",
            "logprobs": {
                "tokens": [" Olympia"],
                "token_logprobs": [-0.25],
                "top_logprobs": [{" Olympia": -0.25, " Seattle": -1.5}],
                "text_offset": [0],
            },
        }
    ],
}


class ScriptedHandler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        self.server.requests.append(
            {"path": self.path, "body": body, "headers": dict(self.headers)}
        )
        if self.server.script:
            status, payload = self.server.script.pop(0)
        else:
            status, payload = 200, self.server.default_payload
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt, *args):
        pass


class ScriptedServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, default_payload=None, script=None):
        self.requests = []
        self.script = list(script or [])
        self.default_payload = default_payload if default_payload is not None else GOLDEN_RESPONSE
        super().__init__(("127.0.0.1", 0), ScriptedHandler)

    @property
    def endpoint(self):
        return f"http://127.0.0.1:{self.server_address[1]}"


@contextmanager
def running(server):
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()


def _backend(endpoint, **kwargs):
    kwargs.setdefault("backoff_base", 0.01)
    kwargs.setdefault("api_key", "")
    return HttpBackend(endpoint, **kwargs)


def test_golden_request_body():
    with running(ScriptedServer()) as server:
        backend = _backend(server.endpoint)
        backend.complete("What is the capital of Washington? A:", top_k=2, max_tokens=8)
    golden = (
        b'{"logprobs": 2, "max_tokens": 8, '
        b'"prompt": "What is the capital of Washington? A:", "temperature": 0.0}'
    )
    request = server.requests[0]
    assert request["path"] == "/v1/completions"
    assert request["body"] == golden
    assert request["headers"]["Content-Type"] == "application/json"


def test_golden_response_parses_bit_exactly():
    with running(ScriptedServer()) as server:
        dist = _backend(server.endpoint).complete("any", top_k=2, max_tokens=8, record_id="r1")
    expected = AnswerDistribution(
        record_id="r1",
        probe_position=0,
        candidates=(TokenCandidate(" Olympia", -0.25, 1), TokenCandidate(" Seattle", -1.5, 2)),
        greedy_completion=" Olympia is the capital.",
    )
    assert dist == expected


def test_bearer_token_from_environment(monkeypatch):
    monkeypatch.setenv("LATENT_RECALL_API_KEY", "secret-token")
    with running(ScriptedServer()) as server:
        HttpBackend(server.endpoint, backoff_base=0.01).complete("p", top_k=1, max_tokens=4)
    assert server.requests[0]["headers"]["Authorization"] == "Bearer secret-token"


def test_no_auth_header_without_key():
    with running(ScriptedServer()) as server:
        _backend(server.endpoint).complete("p", top_k=1, max_tokens=4)
    assert "Authorization" not in server.requests[0]["headers"]


def test_retry_on_500_then_success(caplog):
    script = [(500, b'{"error": "boom"}')]
    with running(ScriptedServer(script=script)) as server:
        with caplog.at_level(logging.WARNING):
            dist = _backend(server.endpoint).complete("p", top_k=2, max_tokens=8)
    assert len(server.requests) == 2
    assert dist.greedy_completion == " Olympia is the capital."
    assert "retry" in caplog.text


def test_no_retry_on_client_error():
    script = [(404, b'{"error": "nope"}')]
    with running(ScriptedServer(script=script)) as server:
        with pytest.raises(BackendError, match="404"):
            _backend(server.endpoint).complete("p", top_k=1, max_tokens=4)
    assert len(server.requests) == 1


def test_transport_failure_exhausts_attempts():
    backend = _backend("http://127.0.0.1:9", max_attempts=3)
    with pytest.raises(BackendError, match="after 3 attempts"):
        backend.complete("p", top_k=1, max_tokens=4)


def test_missing_logprobs_is_schema_error():
    payload = {"choices": [{"index": 0, "text": "hi", "finish_reason": "stop"}]}
    with running(ScriptedServer(default_payload=payload)) as server:
        with pytest.raises(WireSchemaError, match="logprobs"):
            _backend(server.endpoint).complete("p", top_k=1, max_tokens=4)


def test_fewer_candidates_than_requested_is_schema_error():
    with running(ScriptedServer()) as server:
        with pytest.raises(WireSchemaError, match="requested"):
            _backend(server.endpoint).complete("p", top_k=3, max_tokens=4)


def test_probe_position_beyond_response_is_schema_error():
    with running(ScriptedServer()) as server:
        backend = _backend(server.endpoint, probe_position=2)
        with pytest.raises(WireSchemaError, match="probe position"):
            backend.complete("p", top_k=1, max_tokens=4)


def test_capability_check_happens_before_any_request():
    with running(ScriptedServer()) as server:
        backend = _backend(server.endpoint, max_top_logprobs=5)
        with pytest.raises(CapabilityError):
            backend.complete("p", top_k=6, max_tokens=4)
    assert server.requests == []


def test_base10_logprobs_convert_to_natural_log():
    payload = {
        "choices": [
            {
                "index": 0,
                "text": "x",
                "finish_reason": "stop",
                "logprobs": {"top_logprobs": [{" a": -1.0}]},
            }
        ]
    }
    with running(ScriptedServer(default_payload=payload)) as server:
        dist = _backend(server.endpoint, logprob_base="10").complete("p", top_k=1, max_tokens=4)
    assert dist.candidates[0].logprob == -math.log(10.0)


def test_http_backend_matches_in_process_mock():
    spec = GapModelSpec(
        default=ScriptedReply("fallback", (("unsure", -0.2), (" maybe", -1.1), (" dunno", -3.0))),
        scripts={
            "P1": ScriptedReply(
                "unsure",
                (("unsure", -0.1), (" Olymp", -1.2), (" Seattle", -2.0)),
                {" Olymp": "ia"},
            )
        },
    )
    in_process = MockBackend(spec)
    server = MockCompletionServer(spec, port=0)
    with running(server):
        over_http = _backend(server.endpoint)
        for prompt, top_k in (("P1", 3), ("P1 Olymp", 1), ("unknown", 2)):
            assert over_http.complete(prompt, top_k, 8, record_id="r") == in_process.complete(
                prompt, top_k, 8, record_id="r"
            )
