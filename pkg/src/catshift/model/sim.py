"""Deterministic simulated target model for offline pipeline testing.

The simulator stores a memory of (prompt -> completion) associations with
a recall strength in [0, 1]. Decoding reproduces a strength-proportional
fraction of the stored completion verbatim and fills the rest with
seeded hash noise, so output fidelity is a monotone function of recall
strength. Fine-tuning strengthens re-exposed memories much more than it
instills novel ones (recovery gain vs novelty gain), which reproduces
the member/non-member output-shift asymmetry the auditing pipeline
relies on.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from ..corpus import PairRecord
from ..errors import CorpusError, EndpointError
from ..ioutil import content_digest
from .base import (
    SIM_SCHEME,
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


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _prompt_key(prompt: str) -> str:
    return hashlib.blake2b(_normalize(prompt).encode("utf-8"), digest_size=16).hexdigest()


def _hash_u32(*parts: object) -> int:
    payload = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=4).digest(), "big")


def _noise_token(noise_seed: int, prompt_norm: str, index: int) -> str:
    digest = hashlib.blake2b(
        f"{noise_seed}|{prompt_norm}|tok|{index}".encode("utf-8"), digest_size=4
    ).hexdigest()
    return f"n{digest}"


def _clamp(x: float) -> float:
    return max(0.0, min(1.0, x))


@dataclass(frozen=True)
class MemoryEntry:
    completion: str
    strength: float

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"recall strength must be in [0, 1], got {self.strength}")


@dataclass(frozen=True)
class SimModelState:
    """Immutable simulator state; updates return new states."""

    memory: Mapping[str, MemoryEntry] = field(default_factory=dict)
    gain_recover: float = 0.6
    gain_new: float = 0.1
    noise_seed: int = 0
    recall_threshold: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.recall_threshold <= 1.0:
            raise ValueError("recall_threshold must be in [0, 1]")
        object.__setattr__(self, "memory", MappingProxyType(dict(self.memory)))

    def with_pair(self, pair: PairRecord, strength: float) -> "SimModelState":
        """Seed one pair into memory (returns a new state)."""
        memory = dict(self.memory)
        memory[_prompt_key(pair.prompt)] = MemoryEntry(_normalize(pair.completion), _clamp(strength))
        return replace(self, memory=memory)

    def with_pairs(self, pairs: Iterable[PairRecord], strength: float) -> "SimModelState":
        state = self
        for pair in pairs:
            state = state.with_pair(pair, strength)
        return state


def _keep_positions(noise_seed: int, prompt_norm: str, length: int, strength: float) -> set[int]:
    """Verbatim token positions: the first round(strength*length) in a
    seeded priority order, so the kept sets nest as strength grows."""
    if length == 0:
        return set()
    keep_n = min(length, max(0, int(round(strength * length))))
    priority = sorted(range(length), key=lambda i: (_hash_u32(noise_seed, prompt_norm, "pos", i), i))
    return set(priority[:keep_n])


def sim_complete(state: SimModelState, prompt: str, max_new_tokens: int) -> str:
    """Deterministic decode: strength-proportional verbatim recall.

    A memory hit at or above the recall threshold emits the stored
    completion with a strength fraction of its tokens verbatim and the
    rest replaced by seeded noise; anything else emits pure seeded noise.
    """
    require_prompt(prompt)
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    norm = _normalize(prompt)
    entry = state.memory.get(_prompt_key(norm))
    if entry is not None and entry.strength >= state.recall_threshold:
        tokens = entry.completion.split()[:max_new_tokens]
        keep = _keep_positions(state.noise_seed, norm, len(tokens), entry.strength)
        return " ".join(
            tok if i in keep else _noise_token(state.noise_seed, norm, i)
            for i, tok in enumerate(tokens)
        )
    return " ".join(_noise_token(state.noise_seed, norm, i) for i in range(max_new_tokens))


def _apply_finetune(state: SimModelState, pairs: Sequence[PairRecord], scale: float) -> SimModelState:
    """Gain update at a fractional training budget (scale in (0, 1])."""
    pairs = list(pairs)
    keys = [_prompt_key(p.prompt) for p in pairs]
    hits = sum(1 for k in keys if k in state.memory)
    member_fraction = hits / len(pairs) if pairs else 0.0
    batch = set(keys)

    memory = dict(state.memory)
    # Recovery generalizes: memories outside the batch are revived in
    # proportion to how much of the batch the model already knows.
    spread = state.gain_recover * scale * member_fraction
    if spread > 0:
        for key, entry in state.memory.items():
            if key not in batch:
                memory[key] = MemoryEntry(entry.completion, _clamp(entry.strength + spread))
    for key, pair in zip(keys, pairs):
        old = state.memory.get(key)
        if old is not None:
            memory[key] = MemoryEntry(
                old.completion, _clamp(old.strength + state.gain_recover * scale)
            )
        else:
            memory[key] = MemoryEntry(_normalize(pair.completion), _clamp(state.gain_new * scale))
    return replace(state, memory=memory)


def sim_finetune(state: SimModelState, pairs: Sequence[PairRecord]) -> SimModelState:
    """Re-exposed memories gain the recovery gain; novel pairs are inserted
    at the (smaller) novelty gain. The input state is unchanged."""
    return _apply_finetune(state, pairs, 1.0)


@dataclass(frozen=True)
class SimScenario:
    """Reproducible simulator setup loadable from a JSON file."""

    gain_recover: float = 0.6
    gain_new: float = 0.1
    noise_seed: int = 0
    recall_threshold: float = 0.0
    base_model_id: str = "sim-base"
    memory: tuple[tuple[str, str, float], ...] = ()  # (prompt, completion, strength)

    def to_state(self) -> SimModelState:
        entries = {
            _prompt_key(prompt): MemoryEntry(_normalize(completion), _clamp(strength))
            for prompt, completion, strength in self.memory
        }
        return SimModelState(
            memory=entries,
            gain_recover=self.gain_recover,
            gain_new=self.gain_new,
            noise_seed=self.noise_seed,
            recall_threshold=self.recall_threshold,
        )


def load_scenario(path: Path | str) -> SimScenario:
    """Load a scenario JSON; memory may be inline or a jsonl-pairs file."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CorpusError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid scenario JSON: {exc.msg}") from exc

    entries: list[tuple[str, str, float]] = []
    for row in obj.get("memory", []):
        entries.append((row["prompt"], row["completion"], float(row.get("strength", 1.0))))
    pairs_path = obj.get("memory_pairs_path")
    if pairs_path:
        from ..corpus import FORMAT_JSONL_PAIRS, load_corpus

        strength = float(obj.get("memory_strength", 1.0))
        for pair in load_corpus(path.parent / pairs_path, FORMAT_JSONL_PAIRS):
            entries.append((pair.prompt, pair.completion, strength))
    return SimScenario(
        gain_recover=float(obj.get("gain_recover", 0.6)),
        gain_new=float(obj.get("gain_new", 0.1)),
        noise_seed=int(obj.get("noise_seed", 0)),
        recall_threshold=float(obj.get("recall_threshold", 0.0)),
        base_model_id=str(obj.get("base_model_id", "sim-base")),
        memory=tuple(entries),
    )


class SimEndpoint(Endpoint):
    """In-process endpoint serving immutable simulator model versions.

    Fine-tune jobs mature across polls (pending -> running -> succeeded)
    and synthesize a decreasing checkpoint loss curve; every checkpoint
    is addressable as its own model version at a fractional training
    budget. All ids derive from content hashes, so identical inputs
    yield identical jobs and versions.
    """

    poll_interval = 0.0
    supports_resume = False

    def __init__(self, scenario: SimScenario | None = None, locator: str = SIM_SCHEME):
        self.scenario = scenario or SimScenario()
        self.locator = locator
        self._lock = threading.Lock()
        self._models: dict[str, SimModelState] = {
            self.scenario.base_model_id: self.scenario.to_state()
        }
        self._jobs: dict[str, dict] = {}
        self._polls: Counter[str] = Counter()
        self.jobs_started = 0

    def base_model(self) -> ModelRef:
        return ModelRef(endpoint=self.locator, model_id=self.scenario.base_model_id)

    def state_of(self, model: ModelRef) -> SimModelState:
        try:
            return self._models[model.model_id]
        except KeyError:
            raise EndpointError(404, f"unknown model {model.model_id!r}") from None

    def register(self, model_id: str, state: SimModelState) -> ModelRef:
        """Expose a prepared state under an explicit version id (test hook)."""
        with self._lock:
            self._models[model_id] = state
        return ModelRef(endpoint=self.locator, model_id=model_id)

    def complete(self, model: ModelRef, prompt: str, max_new_tokens: int) -> str:
        return sim_complete(self.state_of(model), prompt, max_new_tokens)

    def start_finetune(self, base: ModelRef, spec: FineTuneSpec) -> FineTuneJob:
        if not spec.pairs:
            raise ValueError("fine-tune spec has no pairs")
        base_state = self.state_of(base)
        digest = content_digest(
            {
                "base": base.model_id,
                "pairs": [(p.id, p.prompt, p.completion) for p in spec.pairs],
                "hyperparams": spec.hyperparams(),
            }
        )
        job_id = f"simjob-{digest}"
        result_id = f"{base.model_id}+ft-{digest[:8]}"
        total_steps = math.ceil(len(spec.pairs) / spec.batch_size) * spec.epochs
        steps = list(range(spec.checkpoint_every, total_steps + 1, spec.checkpoint_every))
        if not steps or steps[-1] != total_steps:
            steps.append(total_steps)

        checkpoints = []
        with self._lock:
            for step in steps:
                jitter = _hash_u32(digest, step) / 2**32
                loss = 0.4 + 2.0 * math.exp(-3.0 * step / total_steps) * (1.0 + 0.02 * jitter)
                model_id = f"{result_id}@s{step}"
                self._models[model_id] = _apply_finetune(base_state, spec.pairs, step / total_steps)
                checkpoints.append(Checkpoint(step=step, loss=round(loss, 6), model_id=model_id))
            self._models[result_id] = _apply_finetune(base_state, spec.pairs, 1.0)
            self._jobs[job_id] = {
                "checkpoints": tuple(checkpoints),
                "result": ModelRef(endpoint=self.locator, model_id=result_id),
            }
            self.jobs_started += 1
        return FineTuneJob(job_id=job_id, endpoint=self.locator, status=STATUS_PENDING)

    def poll_finetune(self, job: FineTuneJob) -> FineTuneJob:
        with self._lock:
            record = self._jobs.get(job.job_id)
            if record is None:
                raise EndpointError(404, f"unknown job {job.job_id!r}")
            self._polls[job.job_id] += 1
            polls = self._polls[job.job_id]
        checkpoints = record["checkpoints"]
        if polls == 1:
            snapshot = FineTuneJob(
                job_id=job.job_id,
                endpoint=self.locator,
                status=STATUS_RUNNING,
                checkpoints=checkpoints[: len(checkpoints) // 2],
            )
        else:
            snapshot = FineTuneJob(
                job_id=job.job_id,
                endpoint=self.locator,
                status=STATUS_SUCCEEDED,
                checkpoints=checkpoints,
                result_model=record["result"],
            )
        check_job_progress(job, snapshot)
        return snapshot
