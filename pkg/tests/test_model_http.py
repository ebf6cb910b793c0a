"""Wire-protocol client tests against a scriptable in-process HTTP server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from catshift.errors import EndpointError, ProtocolError, TransportError
from catshift.model.base import FineTuneSpec, ModelRef, wait_finetune
from catshift.model.http import HttpEndpoint, RemoteScorer
from catshift.corpus import PairRecord


class _ScriptedServer:
    """Serves queued (status, payload) responses and records requests."""

    def __init__(self):
        self.responses: list[tuple[int, dict]] = []
        self.requests: list[dict] = []

        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _serve(self):
                length = int(self.headers.get("Content-Length") or 0)
                body = json.loads(self.rfile.read(length)) if length else None
                outer.requests.append(
                    {
                        "method": self.command,
                        "path": self.path,
                        "body": body,
                        "auth": self.headers.get("Authorization"),
                    }
                )
                status, payload = outer.responses.pop(0)
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            do_POST = _serve
            do_GET = _serve

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()
        self.url = f"http://127.0.0.1:{self.httpd.server_port}"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture()
def server():
    srv = _ScriptedServer()
    yield srv
    srv.close()


def _endpoint(server, **kwargs) -> HttpEndpoint:
    kwargs.setdefault("backoff", 0.0)
    kwargs.setdefault("sleep", lambda _: None)
    kwargs.setdefault("token_env", None)
    return HttpEndpoint(server.url, **kwargs)


MODEL = "target-v1"


def test_complete_roundtrip(server):
    server.responses.append((200, {"completion": "hello world"}))
    endpoint = _endpoint(server)
    got = endpoint.complete(ModelRef(server.url, MODEL), "greet me", 16)
    assert got == "hello world"
    (req,) = server.requests
    assert req["path"] == "/v1/complete"
    assert req["body"] == {
        "model_id": MODEL,
        "prompt": "greet me",
        "max_new_tokens": 16,
        "deterministic": True,
    }


def test_complete_rejects_probability_fields(server):
    server.responses.append((200, {"completion": "x", "logprobs": [-0.1, -0.5]}))
    endpoint = _endpoint(server)
    with pytest.raises(ProtocolError, match="probability"):
        endpoint.complete(ModelRef(server.url, MODEL), "p", 4)


def test_complete_flags_benign_extra_fields(server):
    server.responses.append((200, {"completion": "x", "usage": {"tokens": 3}}))
    endpoint = _endpoint(server)
    assert endpoint.complete(ModelRef(server.url, MODEL), "p", 4) == "x"
    warnings = endpoint.drain_warnings()
    assert warnings and "usage" in warnings[0]
    assert endpoint.drain_warnings() == []


def test_empty_prompt_never_hits_the_wire(server):
    endpoint = _endpoint(server)
    with pytest.raises(ValueError, match="empty prompt"):
        endpoint.complete(ModelRef(server.url, MODEL), " ", 4)
    assert server.requests == []


def test_retry_then_success(server):
    server.responses.extend([(500, {"error": "flaky"}), (200, {"completion": "ok"})])
    endpoint = _endpoint(server, retries=3)
    assert endpoint.complete(ModelRef(server.url, MODEL), "p", 4) == "ok"
    assert len(server.requests) == 2


def test_retries_exhausted_raises_transport_error(server):
    server.responses.extend([(500, {"error": "down"})] * 3)
    endpoint = _endpoint(server, retries=3)
    with pytest.raises(TransportError, match="after 3 attempts"):
        endpoint.complete(ModelRef(server.url, MODEL), "p", 4)
    assert len(server.requests) == 3


def test_client_error_is_not_retried(server):
    server.responses.append((400, {"error": "bad dataset"}))
    endpoint = _endpoint(server)
    with pytest.raises(EndpointError, match="bad dataset"):
        endpoint.complete(ModelRef(server.url, MODEL), "p", 4)
    assert len(server.requests) == 1


def test_bearer_token_from_named_env(server, monkeypatch):
    monkeypatch.setenv("OTHER_TOKEN", "sekrit")
    server.responses.append((200, {"completion": "ok"}))
    endpoint = HttpEndpoint(server.url, token_env="OTHER_TOKEN", backoff=0.0, sleep=lambda _: None)
    endpoint.complete(ModelRef(server.url, MODEL), "p", 4)
    assert server.requests[0]["auth"] == "Bearer sekrit"


def _spec() -> FineTuneSpec:
    pairs = tuple(PairRecord(id=f"p{i}", prompt=f"q{i}", completion=f"c{i}") for i in range(3))
    return FineTuneSpec(pairs=pairs)


def test_finetune_submit_and_poll_lifecycle(server):
    server.responses.extend(
        [
            (200, {"job_id": "job-9"}),
            (200, {"status": "running", "checkpoints": [{"step": 10, "loss": 2.0}]}),
            (
                200,
                {
                    "status": "succeeded",
                    "checkpoints": [
                        {"step": 10, "loss": 2.0},
                        {"step": 20, "loss": 1.5, "model_id": "target-v1-ft@20"},
                    ],
                    "result_model_id": "target-v1-ft",
                },
            ),
        ]
    )
    endpoint = _endpoint(server)
    job = endpoint.start_finetune(ModelRef(server.url, MODEL), _spec())
    assert job.status == "pending"
    job = wait_finetune(endpoint, job, poll_interval=0.0)
    assert job.status == "succeeded"
    assert job.result_model.model_id == "target-v1-ft"
    assert [c.step for c in job.checkpoints] == [10, 20]
    submit = server.requests[0]
    assert submit["path"] == "/v1/finetune"
    assert submit["body"]["base_model_id"] == MODEL
    assert submit["body"]["hyperparams"]["lora_rank"] == 8
    assert len(submit["body"]["pairs"]) == 3


def test_poll_rejects_status_regression(server):
    server.responses.extend(
        [
            (200, {"job_id": "job-1"}),
            (200, {"status": "running", "checkpoints": []}),
            (200, {"status": "pending", "checkpoints": []}),
        ]
    )
    endpoint = _endpoint(server)
    job = endpoint.start_finetune(ModelRef(server.url, MODEL), _spec())
    job = endpoint.poll_finetune(job)
    with pytest.raises(ProtocolError, match="regressed"):
        endpoint.poll_finetune(job)


def test_poll_rejects_checkpoint_history_rewrite(server):
    server.responses.extend(
        [
            (200, {"job_id": "job-2"}),
            (200, {"status": "running", "checkpoints": [{"step": 10, "loss": 2.0}]}),
            (200, {"status": "running", "checkpoints": [{"step": 10, "loss": 1.0}]}),
        ]
    )
    endpoint = _endpoint(server)
    job = endpoint.start_finetune(ModelRef(server.url, MODEL), _spec())
    job = endpoint.poll_finetune(job)
    with pytest.raises(ProtocolError, match="history changed"):
        endpoint.poll_finetune(job)


def test_remote_scorer_clamps_out_of_range(server):
    server.responses.extend([(200, {"score": 0.42}), (200, {"score": 1.7})])
    scorer = RemoteScorer(server.url, token_env=None, backoff=0.0, sleep=lambda _: None)
    assert scorer.similarity("a", "b") == 0.42
    assert scorer.similarity("a", "b") == 1.0
    assert any("clamped" in w for w in scorer.drain_warnings())


def test_remote_scorer_endpoint_down():
    scorer = RemoteScorer(
        "http://127.0.0.1:9", token_env=None, retries=2, backoff=0.0, sleep=lambda _: None
    )
    with pytest.raises(TransportError):
        scorer.similarity("a", "b")
