"""Immutable model-version store and the one-at-a-time fine-tune job queue."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Callable

from .lm import CharLM, restore, snapshot


class JobBusyError(RuntimeError):
    """Another fine-tune job is still running."""


@dataclass
class ModelVersion:
    model_id: str
    arch: dict
    state: dict
    training_log: list[tuple[int, float]] = field(default_factory=list)


class ModelStore:
    """Versioned weight snapshots; fine-tuning always mints a new version."""

    def __init__(self):
        self._lock = threading.Lock()
        self._versions: dict[str, ModelVersion] = {}
        self._cache: dict[str, CharLM] = {}
        self._counter = 0
        self.decode_lock = threading.Lock()

    def new_id(self, tag: str, content: bytes = b"") -> str:
        with self._lock:
            self._counter += 1
            suffix = hashlib.blake2b(content, digest_size=3).hexdigest() if content else ""
            parts = [f"lab-{self._counter:04d}", tag]
            if suffix:
                parts.append(suffix)
            return "-".join(parts)

    def put(self, model_id: str, model: CharLM, training_log: list[tuple[int, float]]) -> str:
        version = ModelVersion(
            model_id=model_id, arch=dict(model.arch), state=snapshot(model), training_log=training_log
        )
        with self._lock:
            if model_id in self._versions:
                raise ValueError(f"version {model_id!r} already exists")
            self._versions[model_id] = version
        return model_id

    def exists(self, model_id: str) -> bool:
        with self._lock:
            return model_id in self._versions

    def model(self, model_id: str) -> CharLM:
        """Instantiated read-only model for a version (cached)."""
        with self._lock:
            cached = self._cache.get(model_id)
            if cached is not None:
                return cached
            version = self._versions.get(model_id)
            if version is None:
                raise KeyError(model_id)
        instance = restore(version.arch, version.state)
        with self._lock:
            self._cache[model_id] = instance
        return instance

    def fresh_trainable(self, model_id: str) -> CharLM:
        """A private mutable copy for fine-tuning; never the cached instance."""
        with self._lock:
            version = self._versions.get(model_id)
            if version is None:
                raise KeyError(model_id)
        return restore(version.arch, version.state)

    def training_log(self, model_id: str) -> list[tuple[int, float]]:
        with self._lock:
            return list(self._versions[model_id].training_log)


@dataclass
class JobState:
    job_id: str
    status: str = "pending"  # pending | running | succeeded | failed
    checkpoints: list[dict] = field(default_factory=list)
    result_model_id: str | None = None
    error: str | None = None


class JobManager:
    """Runs fine-tune jobs on a background thread, one at a time (409 policy).

    All reads go through ``response_for`` so pollers always see a
    consistent snapshot: the result model id becomes visible in the same
    locked update that flips the status to succeeded.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._jobs: dict[str, JobState] = {}
        self._active: str | None = None
        self._counter = 0

    def response_for(self, job_id: str) -> dict:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise KeyError(job_id)
            body = {"status": job.status, "checkpoints": [dict(c) for c in job.checkpoints]}
            if job.result_model_id is not None:
                body["result_model_id"] = job.result_model_id
            if job.error is not None:
                body["error"] = job.error
            return body

    def add_checkpoint(self, job: JobState, checkpoint: dict) -> None:
        with self._lock:
            job.checkpoints.append(dict(checkpoint))

    def submit(self, work: Callable[[JobState], str]) -> str:
        """``work(job)`` trains and returns the result model id."""
        with self._lock:
            if self._active is not None and self._jobs[self._active].status in ("pending", "running"):
                raise JobBusyError(f"job {self._active} is still active")
            self._counter += 1
            job = JobState(job_id=f"labjob-{self._counter:04d}")
            self._jobs[job.job_id] = job
            self._active = job.job_id

        def run():
            with self._lock:
                job.status = "running"
            try:
                result_id = work(job)
            except Exception as exc:  # surfaced to the polling client
                with self._lock:
                    job.status = "failed"
                    job.error = f"{type(exc).__name__}: {exc}"
            else:
                with self._lock:
                    job.result_model_id = result_id
                    job.status = "succeeded"

        threading.Thread(target=run, name=job.job_id, daemon=True).start()
        return job.job_id
