"""Model handles, fine-tune job records, and the endpoint interface.

A ModelRef is an opaque (endpoint, version) pair: the toolkit never sees
weights or probabilities, only top-1 completions. Fine-tuning mints new
versions and never mutates existing ones.
"""

from __future__ import annotations

import abc
import time
from concurrent.futures import ThreadPoolExecutor
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from ..corpus import PairRecord
from ..errors import CatShiftError, ProtocolError

STATUS_PENDING = "pending"
STATUS_RUNNING = "running"
STATUS_SUCCEEDED = "succeeded"
STATUS_FAILED = "failed"
_STATUS_ORDER = {STATUS_PENDING: 0, STATUS_RUNNING: 1, STATUS_SUCCEEDED: 2, STATUS_FAILED: 2}

SIM_SCHEME = "sim:"


@dataclass(frozen=True)
class ModelRef:
    """Opaque handle to one immutable model version behind an endpoint."""

    endpoint: str
    model_id: str


@dataclass(frozen=True)
class FineTuneSpec:
    """Fine-tune request: training pairs plus advisory hyperparameters.

    The hyperparameters are pass-through metadata; under black-box access
    the serving side owns the optimizer and may not honor all of them.
    """

    pairs: tuple[PairRecord, ...]
    lora_rank: int = 8
    lora_alpha: float = 32.0
    dropout: float = 0.1
    learning_rate: float = 8e-5
    batch_size: int = 8
    checkpoint_every: int = 10
    epochs: int = 1

    def __post_init__(self):
        for name in ("lora_rank", "batch_size", "checkpoint_every", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("dropout", "learning_rate"):
            rate = getattr(self, name)
            if not 0.0 < rate <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {rate}")

    def hyperparams(self) -> dict:
        return {
            "lora_rank": self.lora_rank,
            "lora_alpha": self.lora_alpha,
            "dropout": self.dropout,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "checkpoint_every": self.checkpoint_every,
            "epochs": self.epochs,
        }


@dataclass(frozen=True)
class Checkpoint:
    """One saved training step; model_id is present when addressable."""

    step: int
    loss: float
    model_id: str | None = None


@dataclass(frozen=True)
class FineTuneJob:
    """Snapshot of an asynchronous fine-tune run."""

    job_id: str
    endpoint: str
    status: str
    checkpoints: tuple[Checkpoint, ...] = ()
    result_model: ModelRef | None = None
    error: str | None = None

    def __post_init__(self):
        if self.status not in _STATUS_ORDER:
            raise ValueError(f"unknown job status {self.status!r}")
        steps = [c.step for c in self.checkpoints]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ProtocolError(f"job {self.job_id}: checkpoint steps not strictly increasing")
        if (self.result_model is not None) != (self.status == STATUS_SUCCEEDED):
            raise ProtocolError(
                f"job {self.job_id}: result model must be present iff status is succeeded"
            )


def check_job_progress(before: FineTuneJob, after: FineTuneJob) -> None:
    """Enforce monotone status transitions and a grow-only checkpoint list."""
    if _STATUS_ORDER[after.status] < _STATUS_ORDER[before.status]:
        raise ProtocolError(
            f"job {before.job_id}: status regressed {before.status} -> {after.status}"
        )
    old = [(c.step, c.loss) for c in before.checkpoints]
    new = [(c.step, c.loss) for c in after.checkpoints]
    if new[: len(old)] != old:
        raise ProtocolError(f"job {before.job_id}: checkpoint history changed")


@dataclass(frozen=True)
class CompletionRecord:
    """Top-1 completions for one prompt before and after fine-tuning."""

    pair_id: str
    pre: str
    post: str


class Endpoint(abc.ABC):
    """Uniform surface over remote wire-protocol services and the simulator."""

    #: default seconds between fine-tune polls; 0 for in-process backends
    poll_interval: float = 10.0
    #: whether job ids survive process restarts (safe to cache for resume)
    supports_resume: bool = False

    @abc.abstractmethod
    def complete(self, model: ModelRef, prompt: str, max_new_tokens: int) -> str:
        """Return the deterministic top-1 continuation; never probabilities."""

    @abc.abstractmethod
    def start_finetune(self, base: ModelRef, spec: FineTuneSpec) -> FineTuneJob:
        """Submit a fine-tune run; returns immediately with a pending job."""

    @abc.abstractmethod
    def poll_finetune(self, job: FineTuneJob) -> FineTuneJob:
        """Fetch the latest job snapshot, validated against the previous one."""

    def drain_warnings(self) -> list[str]:
        """Collected non-fatal protocol observations since the last drain."""
        return []


def require_prompt(prompt: str) -> None:
    if not prompt or not prompt.strip():
        raise ValueError("empty prompt")


def wait_finetune(
    endpoint: Endpoint,
    job: FineTuneJob,
    poll_interval: float | None = None,
    timeout: float | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> FineTuneJob:
    """Poll until the job reaches a terminal status."""
    interval = endpoint.poll_interval if poll_interval is None else poll_interval
    waited = 0.0
    while job.status not in (STATUS_SUCCEEDED, STATUS_FAILED):
        if timeout is not None and waited > timeout:
            raise CatShiftError(f"fine-tune job {job.job_id} timed out after {waited:.0f}s")
        if interval > 0:
            sleep(interval)
            waited += interval
        job = endpoint.poll_finetune(job)
    return job


@dataclass(frozen=True)
class CheckpointChoice:
    """Outcome of checkpoint selection, with a warning when it fell back."""

    model: ModelRef
    step: int | None
    warning: str | None = None


def select_checkpoint(
    job: FineTuneJob,
    finetune_losses: Sequence[tuple[int, float]] | None = None,
) -> CheckpointChoice:
    """Pick the checkpoint with the lowest min-max-normalized training loss.

    Ties break toward the smaller step (least drift from the base model).
    Jobs without checkpoints, and winning checkpoints without an
    addressable model id, fall back to the job's result model with a
    warning for the report.
    """
    if job.status != STATUS_SUCCEEDED or job.result_model is None:
        raise CatShiftError(f"job {job.job_id} has not succeeded; cannot select a checkpoint")
    losses = list(finetune_losses) if finetune_losses is not None else [
        (c.step, c.loss) for c in job.checkpoints
    ]
    if not losses:
        return CheckpointChoice(
            model=job.result_model,
            step=None,
            warning=f"job {job.job_id}: no checkpoints; using result model",
        )
    lo = min(loss for _, loss in losses)
    hi = max(loss for _, loss in losses)
    span = hi - lo
    normalized = [(step, 0.0 if span == 0 else (loss - lo) / span) for step, loss in losses]
    best_step, _ = min(normalized, key=lambda item: (item[1], item[0]))
    by_step = {c.step: c for c in job.checkpoints}
    chosen = by_step.get(best_step)
    if chosen is None or chosen.model_id is None:
        return CheckpointChoice(
            model=job.result_model,
            step=best_step,
            warning=(
                f"job {job.job_id}: checkpoint at step {best_step} is not addressable; "
                "using result model"
            ),
        )
    return CheckpointChoice(
        model=ModelRef(endpoint=job.endpoint, model_id=chosen.model_id), step=best_step
    )


def complete_batch(
    endpoint: Endpoint,
    model: ModelRef,
    items: Iterable[tuple[str, str]],
    max_new_tokens: int,
    parallelism: int = 8,
    k_repeat: int = 1,
) -> tuple[dict[str, str], dict[str, str]]:
    """Complete many prompts with bounded fan-out.

    Returns (completions keyed by item id, failures keyed by item id).
    Results are keyed so arrival order never matters. With k_repeat > 1
    the majority completion wins (lexicographic tiebreak) for endpoints
    that cannot guarantee deterministic decoding.
    """
    items = list(items)
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if k_repeat < 1:
        raise ValueError("k_repeat must be >= 1")

    def one(prompt: str) -> str:
        if k_repeat == 1:
            return endpoint.complete(model, prompt, max_new_tokens)
        votes = Counter(endpoint.complete(model, prompt, max_new_tokens) for _ in range(k_repeat))
        top = max(votes.values())
        return min(text for text, count in votes.items() if count == top)

    completions: dict[str, str] = {}
    failures: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {item_id: pool.submit(one, prompt) for item_id, prompt in items}
        for item_id, future in futures.items():
            try:
                completions[item_id] = future.result()
            except CatShiftError as exc:
                failures[item_id] = str(exc)
    return completions, failures


def open_endpoint(endpoint: str, **kwargs) -> Endpoint:
    """Build an Endpoint from a URL or a ``sim:`` locator.

    ``sim:`` opens a fresh default simulator; ``sim:<path>`` loads a
    scenario file. Anything else is treated as an HTTP base URL.
    """
    if endpoint.startswith(SIM_SCHEME):
        from .sim import SimEndpoint, load_scenario

        rest = endpoint[len(SIM_SCHEME) :]
        scenario = load_scenario(rest) if rest else None
        return SimEndpoint(scenario, locator=endpoint)  # transport kwargs don't apply in-process
    from .http import HttpEndpoint

    return HttpEndpoint(endpoint, **kwargs)
