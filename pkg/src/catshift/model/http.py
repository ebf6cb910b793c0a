"""HTTP client for the v1 model-adapter wire protocol.

Label-only by construction: completion responses carrying probability
signals are rejected as protocol violations, and any other unexpected
fields are ignored but flagged in the warnings the report collects.
"""

from __future__ import annotations

import os
import threading
import time
from typing import Any, Callable

import requests

from ..errors import EndpointError, ProtocolError, TransportError
from .base import (
    STATUS_FAILED,
    STATUS_PENDING,
    STATUS_RUNNING,
    STATUS_SUCCEEDED,
    Checkpoint,
    Endpoint,
    FineTuneJob,
    FineTuneSpec,
    ModelRef,
    check_job_progress,
    require_prompt,
)

DEFAULT_TOKEN_ENV = "CATSHIFT_API_TOKEN"

#: response fields on /v1/complete that would leak distribution information
PROBABILITY_FIELDS = frozenset(
    {
        "logprobs",
        "log_probs",
        "logit",
        "logits",
        "probabilities",
        "probs",
        "token_logprobs",
        "top_logprobs",
        "scores",
    }
)

_RETRYABLE = (requests.ConnectionError, requests.Timeout)


class _JsonHttpClient:
    """Shared request plumbing: bearer auth, bounded retries, JSON bodies."""

    def __init__(
        self,
        base_url: str,
        token_env: str | None = DEFAULT_TOKEN_ENV,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = max(1, retries)
        self.backoff = backoff
        self.session = session or requests.Session()
        self._sleep = sleep
        token = os.environ.get(token_env) if token_env else None
        self._headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._warnings: list[str] = []
        self._warn_lock = threading.Lock()

    def _warn(self, message: str) -> None:
        with self._warn_lock:
            self._warnings.append(message)

    def drain_warnings(self) -> list[str]:
        with self._warn_lock:
            warnings, self._warnings = self._warnings, []
        return warnings

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Exception | None = None
        for attempt in range(1, self.retries + 1):
            try:
                resp = self.session.request(
                    method, url, json=payload, headers=self._headers, timeout=self.timeout
                )
            except _RETRYABLE as exc:
                last_error = exc
            else:
                if resp.status_code >= 500:
                    last_error = TransportError(f"{method} {url} -> {resp.status_code}")
                else:
                    return self._parse(method, url, resp)
            if attempt < self.retries:
                self._sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError(
            f"{method} {url} failed after {self.retries} attempts: {last_error}"
        )

    @staticmethod
    def _parse(method: str, url: str, resp: requests.Response) -> dict:
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{method} {url}: non-JSON response") from exc
        if resp.status_code >= 400:
            message = body.get("error", resp.text) if isinstance(body, dict) else resp.text
            raise EndpointError(resp.status_code, str(message))
        if not isinstance(body, dict):
            raise ProtocolError(f"{method} {url}: expected a JSON object response")
        return body


class HttpEndpoint(_JsonHttpClient, Endpoint):
    """Endpoint implementation speaking the v1 wire protocol over HTTP."""

    supports_resume = True

    def __init__(self, base_url: str, poll_interval: float = 10.0, **kwargs):
        super().__init__(base_url, **kwargs)
        self.poll_interval = poll_interval

    def complete(self, model: ModelRef, prompt: str, max_new_tokens: int) -> str:
        require_prompt(prompt)
        body = self._request(
            "POST",
            "/v1/complete",
            {
                "model_id": model.model_id,
                "prompt": prompt,
                "max_new_tokens": max_new_tokens,
                "deterministic": True,
            },
        )
        leaked = PROBABILITY_FIELDS & body.keys()
        if leaked:
            raise ProtocolError(
                f"completion response exposes probability fields {sorted(leaked)}; refusing to consume them"
            )
        completion = body.get("completion")
        if not isinstance(completion, str):
            raise ProtocolError("completion response missing string field 'completion'")
        extras = body.keys() - {"completion"}
        if extras:
            self._warn(f"/v1/complete returned extra fields {sorted(extras)}; ignored")
        return completion

    def start_finetune(self, base: ModelRef, spec: FineTuneSpec) -> FineTuneJob:
        if not spec.pairs:
            raise ValueError("fine-tune spec has no pairs")
        body = self._request(
            "POST",
            "/v1/finetune",
            {
                "base_model_id": base.model_id,
                "pairs": [{"prompt": p.prompt, "completion": p.completion} for p in spec.pairs],
                "hyperparams": spec.hyperparams(),
            },
        )
        job_id = body.get("job_id")
        if not isinstance(job_id, str) or not job_id:
            raise ProtocolError("fine-tune response missing string field 'job_id'")
        return FineTuneJob(job_id=job_id, endpoint=self.base_url, status=STATUS_PENDING)

    def poll_finetune(self, job: FineTuneJob) -> FineTuneJob:
        body = self._request("GET", f"/v1/finetune/{job.job_id}")
        status = body.get("status")
        if status not in (STATUS_PENDING, STATUS_RUNNING, STATUS_SUCCEEDED, STATUS_FAILED):
            raise ProtocolError(f"job {job.job_id}: unknown status {status!r}")
        checkpoints = []
        for row in body.get("checkpoints", []):
            checkpoints.append(
                Checkpoint(
                    step=int(row["step"]),
                    loss=float(row["loss"]),
                    model_id=row.get("model_id"),
                )
            )
        result_id = body.get("result_model_id")
        result = (
            ModelRef(endpoint=self.base_url, model_id=result_id)
            if isinstance(result_id, str) and result_id
            else None
        )
        snapshot = FineTuneJob(
            job_id=job.job_id,
            endpoint=self.base_url,
            status=status,
            checkpoints=tuple(checkpoints),
            result_model=result,
            error=body.get("error"),
        )
        check_job_progress(job, snapshot)
        return snapshot


class RemoteScorer(_JsonHttpClient):
    """Client for the remote semantic similarity protocol."""

    def similarity(self, a: str, b: str) -> float:
        body = self._request("POST", "/v1/similarity", {"a": a, "b": b})
        score = body.get("score")
        if not isinstance(score, (int, float)):
            raise ProtocolError("similarity response missing numeric field 'score'")
        value = float(score)
        if not 0.0 <= value <= 1.0:
            self._warn(f"similarity score {value} out of [0, 1]; clamped")
            value = max(0.0, min(1.0, value))
        return value
