"""Mock completion server: request validation, determinism, lifecycle."""

from __future__ import annotations

import json
import signal
import socket
import subprocess
import sys
import threading
import time
from contextlib import contextmanager

import httpx
import pytest

from latent_recall import GapModelSpec, MockCompletionServer, ScriptedReply
from latent_recall.cli import main
from conftest import write_gap_files


def _spec():
    return GapModelSpec(
        default=ScriptedReply("fallback", (("unsure", -0.2), (" maybe", -1.1))),
        scripts={"P1": ScriptedReply("hello", ((" hello", -0.1), (" there", -1.0)))},
    )


@contextmanager
def running_server(spec=None):
    server = MockCompletionServer(spec or _spec(), port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()


def _post(server, payload, raw=None):
    data = raw if raw is not None else json.dumps(payload)
    return httpx.post(f"{server.endpoint}/v1/completions", content=data, timeout=5.0)


GOOD = {"prompt": "P1", "max_tokens": 8, "temperature": 0.0, "logprobs": 2}


def test_serves_scripted_completion():
    with running_server() as server:
        response = _post(server, GOOD)
    assert response.status_code == 200
    body = response.json()
    assert body["choices"][0]["text"] == "hello"
    assert body["choices"][0]["logprobs"]["top_logprobs"][0] == {" hello": -0.1, " there": -1.0}


def test_malformed_json_body_is_400():
    with running_server() as server:
        response = _post(server, None, raw="{broken")
    assert response.status_code == 400
    assert "JSON" in response.json()["error"]["message"]


@pytest.mark.parametrize(
    "mutation",
    [
        {"prompt": 7},
        {"logprobs": "two"},
        {"logprobs": 0},
        {"max_tokens": 0},
        {"temperature": 0.7},
        {"temperature": "cold"},
    ],
)
def test_invalid_fields_are_400(mutation):
    payload = {**GOOD, **mutation}
    with running_server() as server:
        response = _post(server, payload)
    assert response.status_code == 400
    assert response.json()["error"]["type"] == "invalid_request_error"


def test_unknown_path_is_404():
    with running_server() as server:
        response = httpx.post(f"{server.endpoint}/v1/chat", content=json.dumps(GOOD), timeout=5.0)
    assert response.status_code == 404


def test_identical_requests_return_identical_bytes():
    with running_server() as server:
        first = _post(server, GOOD).content
        second = _post(server, GOOD).content
    assert first == second
    assert json.loads(first)["created"] == 0


def test_concurrent_requests_are_consistent():
    with running_server() as server:
        results = []

        def hit():
            results.append(_post(server, GOOD).content)

        threads = [threading.Thread(target=hit) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    assert len(set(results)) == 1


def test_cli_serve_handles_sigterm_with_exit_zero(tmp_path):
    _, spec_path = write_gap_files(tmp_path, n_records=5, gap_tenths=2)
    proc = subprocess.Popen(
        [sys.executable, "-m", "latent_recall.cli", "mock-serve", str(spec_path), "--port", "0"],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        banner = proc.stdout.readline()
        assert "serving scripted completions on http://" in banner
        endpoint = banner.strip().rsplit(" ", 1)[-1]
        response = httpx.post(
            f"{endpoint}/v1/completions", content=json.dumps(GOOD), timeout=5.0
        )
        assert response.status_code == 200
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()
    assert proc.returncode == 0


def test_cli_serve_rejects_busy_port(tmp_path):
    _, spec_path = write_gap_files(tmp_path, n_records=3, gap_tenths=0)
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        code = main(["mock-serve", str(spec_path), "--port", str(port)])
    finally:
        blocker.close()
    assert code == 2
