"""Shared builders for audit tests: small corpora, seeded sim endpoints."""

from __future__ import annotations

from collections import Counter

from catshift.corpus import make_bundle
from catshift.errors import TransportError
from catshift.inference import AuditConfig
from catshift.model.base import Endpoint
from catshift.model.sim import SimEndpoint, SimScenario
from catshift.synth import synth_pairs

PROVENANCE = "owner asserts this corpus was written after the model snapshot"


def small_config(**overrides) -> AuditConfig:
    base = dict(n_finetune=20, n_test=30, seed=3, max_new_tokens=12)
    base.update(overrides)
    return AuditConfig(**base)


def build_bundle(cfg: AuditConfig, sus_seed: int = 101, val_seed: int = 202, n_pairs: int = 60):
    suspicious = synth_pairs(n_pairs, sus_seed, prefix="s")
    validation = synth_pairs(n_pairs, val_seed, prefix="v")
    bundle = make_bundle(
        suspicious, validation, cfg.n_finetune, cfg.n_test, cfg.seed, PROVENANCE
    )
    return suspicious, validation, bundle


def seeded_endpoint(
    pairs=(),
    strength: float = 0.3,
    recall_threshold: float = 0.5,
    gain_recover: float = 0.6,
    gain_new: float = 0.1,
    noise_seed: int = 7,
) -> SimEndpoint:
    return SimEndpoint(
        SimScenario(
            gain_recover=gain_recover,
            gain_new=gain_new,
            noise_seed=noise_seed,
            recall_threshold=recall_threshold,
            memory=tuple((p.prompt, p.completion, strength) for p in pairs),
        )
    )


class FlakyEndpoint(Endpoint):
    """Delegates to an inner endpoint but fails completions for chosen prompts."""

    poll_interval = 0.0
    supports_resume = False

    def __init__(self, inner: Endpoint, fail_prompts: set[str]):
        self.inner = inner
        self.fail_prompts = fail_prompts

    def complete(self, model, prompt, max_new_tokens):
        if prompt in self.fail_prompts:
            raise TransportError("injected transport failure")
        return self.inner.complete(model, prompt, max_new_tokens)

    def start_finetune(self, base, spec):
        return self.inner.start_finetune(base, spec)

    def poll_finetune(self, job):
        return self.inner.poll_finetune(job)

    def base_model(self):
        return self.inner.base_model()


class CountingResumableEndpoint(Endpoint):
    """Delegates to a sim endpoint but advertises resume support and counts calls."""

    poll_interval = 0.0
    supports_resume = True

    def __init__(self, inner: Endpoint):
        self.inner = inner
        self.calls: Counter[str] = Counter()

    def complete(self, model, prompt, max_new_tokens):
        self.calls["complete"] += 1
        return self.inner.complete(model, prompt, max_new_tokens)

    def start_finetune(self, base, spec):
        self.calls["start_finetune"] += 1
        return self.inner.start_finetune(base, spec)

    def poll_finetune(self, job):
        self.calls["poll_finetune"] += 1
        return self.inner.poll_finetune(job)

    def base_model(self):
        return self.inner.base_model()
