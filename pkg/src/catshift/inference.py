"""The audit pipeline: baseline screen, fine-tune shift audit, dual-test rule.

An audit collects top-1 completions for held-out prompts before and
after fine-tuning the target model on the suspicious corpus's training
split, scores the per-prompt output shifts, and KS-tests that shift
distribution against the one produced by a known non-member validation
corpus run through the same procedure. A no-fine-tune baseline
(completion accuracy against ground truth) screens first; its Member
verdict is accepted only at a much stricter threshold.
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import stats
from .corpus import CorpusBundle, PairRecord
from .errors import AuditError
from .ioutil import atomic_write_text, content_digest, dumps_canonical, read_json, write_json
from .model.base import (
    CompletionRecord,
    Endpoint,
    FineTuneJob,
    FineTuneSpec,
    ModelRef,
    STATUS_FAILED,
    STATUS_PENDING,
    complete_batch,
    select_checkpoint,
    wait_finetune,
)
from .similarity import (
    DEFAULT_METRIC,
    DEFAULT_NGRAM_N,
    METRICS,
    ScoreSet,
    TAG_SUSPICIOUS,
    TAG_VALIDATION,
    score_pair,
    shift_score_set,
)
from .stats import KsResult

logger = logging.getLogger(__name__)

MEMBER = "Member"
NON_MEMBER = "NonMember"

DECIDED_BY_BASELINE = "baseline_shortcut"
DECIDED_BY_CATSHIFT = "catshift"

MODE_PAIRED = "paired_finetune"
MODE_SHARED = "shared_finetune"
AUDIT_MODES = (MODE_PAIRED, MODE_SHARED)

REPORT_VERSION = "1"


@dataclass(frozen=True)
class AuditConfig:
    """Audit parameters; the serialized snapshot travels in every report."""

    alpha: float = 0.1
    baseline_threshold: float = 1e-3
    metric: str = DEFAULT_METRIC
    ngram_n: int = DEFAULT_NGRAM_N
    mode: str = MODE_PAIRED
    n_finetune: int = 600
    n_test: int = 1000
    seed: int = 0
    max_new_tokens: int = 32
    parallelism: int = 8
    k_repeat: int = 1
    ks_mode: str = stats.MODE_AUTO
    max_drop_fraction: float = 0.10
    poll_interval: float | None = None
    finetune: dict = field(default_factory=dict)
    dataset_id: str | None = None

    def __post_init__(self):
        if not 0.0 < self.baseline_threshold < self.alpha < 1.0:
            raise ValueError(
                "need 0 < baseline_threshold < alpha < 1, got "
                f"baseline_threshold={self.baseline_threshold}, alpha={self.alpha}"
            )
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.mode not in AUDIT_MODES:
            raise ValueError(f"unknown audit mode {self.mode!r}; expected one of {AUDIT_MODES}")
        if self.n_finetune < 1 or self.n_test < 1:
            raise ValueError("n_finetune and n_test must be >= 1")
        if not 0.0 <= self.max_drop_fraction < 1.0:
            raise ValueError("max_drop_fraction must be in [0, 1)")
        FineTuneSpec(pairs=(_PROBE_PAIR,), **self.finetune)  # validate overrides early

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "baseline_threshold": self.baseline_threshold,
            "metric": self.metric,
            "ngram_n": self.ngram_n,
            "mode": self.mode,
            "n_finetune": self.n_finetune,
            "n_test": self.n_test,
            "seed": self.seed,
            "max_new_tokens": self.max_new_tokens,
            "parallelism": self.parallelism,
            "k_repeat": self.k_repeat,
            "ks_mode": self.ks_mode,
            "max_drop_fraction": self.max_drop_fraction,
            "poll_interval": self.poll_interval,
            "finetune": dict(self.finetune),
            "dataset_id": self.dataset_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AuditConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))


_PROBE_PAIR = PairRecord(id="_probe", prompt="a", completion="b")


@dataclass(frozen=True)
class BaselineResult:
    """No-fine-tune screen: completion accuracy against ground truth."""

    mean_score: float
    validation_mean: float
    per_sample: ScoreSet
    validation_per_sample: ScoreSet
    ks: KsResult
    direction_member: bool

    @property
    def p_value(self) -> float:
        return self.ks.p_value


@dataclass(frozen=True)
class RunMetadata:
    endpoint: str
    model_ids: dict
    job_ids: tuple[str, ...]
    seed: int
    config: dict
    dataset_id: str | None
    decoding: str
    suspicious_finetune_ids: tuple[str, ...]
    validation_finetune_ids: tuple[str, ...]
    timestamps: dict


@dataclass(frozen=True)
class AuditReport:
    """Full provenance of one audit; construction re-checks the decision rule."""

    decision: str
    decided_by: str
    ks: KsResult | None
    baseline: BaselineResult | None
    suspicious_scores: ScoreSet | None
    validation_scores: ScoreSet | None
    median_shift_direction: float | None
    completions: dict[str, tuple[CompletionRecord, ...]]
    baseline_completions: dict[str, tuple[tuple[str, str], ...]]
    dropped: dict[str, int]
    warnings: tuple[str, ...]
    run_metadata: RunMetadata

    def __post_init__(self):
        if self.decision not in (MEMBER, NON_MEMBER):
            raise ValueError(f"unknown decision {self.decision!r}")
        if self.decided_by not in (DECIDED_BY_BASELINE, DECIDED_BY_CATSHIFT):
            raise ValueError(f"unknown decided_by {self.decided_by!r}")
        if self.decision == MEMBER:
            alpha = self.run_metadata.config["alpha"]
            threshold = self.run_metadata.config["baseline_threshold"]
            via_baseline = (
                self.decided_by == DECIDED_BY_BASELINE
                and self.baseline is not None
                and self.baseline.p_value < threshold
                and self.baseline.direction_member
            )
            via_catshift = (
                self.decided_by == DECIDED_BY_CATSHIFT
                and self.ks is not None
                and self.ks.p_value < alpha
            )
            if not (via_baseline or via_catshift):
                raise AuditError("Member decision violates the decision invariant")

    @property
    def p_value(self) -> float:
        """The p-value that decided this audit."""
        if self.decided_by == DECIDED_BY_BASELINE:
            assert self.baseline is not None
            return self.baseline.p_value
        assert self.ks is not None
        return self.ks.p_value


def decide(ks: KsResult, alpha: float) -> str:
    """Member iff p < alpha, strictly; p == alpha fails to reject."""
    return MEMBER if ks.p_value < alpha else NON_MEMBER


class StageCache:
    """Content-addressed stage artifacts so interrupted audits resume.

    Only used for endpoints whose job ids survive the process; the cache
    key covers everything the stage output depends on.
    """

    def __init__(self, directory: Path | str | None):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    def get_or_compute(self, stage: str, key: dict, compute: Callable[[], dict]) -> dict:
        if self.directory is None:
            return compute()
        digest = content_digest({"stage": stage, "key": key})
        path = self.directory / f"{stage}-{digest}.json"
        if path.exists():
            logger.info("resuming stage %s from %s", stage, path.name)
            return read_json(path)["value"]
        value = compute()
        write_json(path, {"stage": stage, "key": key, "value": value})
        return value


def _cache_for(endpoint: Endpoint, cache: StageCache | None) -> StageCache | None:
    if cache is not None and endpoint.supports_resume:
        return cache
    return None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _decoding_note(cfg: AuditConfig) -> str:
    note = "greedy top-1, deterministic decoding requested"
    if cfg.k_repeat > 1:
        note += f"; {cfg.k_repeat}-repeat majority vote"
    return note


def _collect(
    endpoint: Endpoint,
    model: ModelRef,
    pairs: Sequence[PairRecord],
    cfg: AuditConfig,
    stage: str,
    cache: StageCache | None,
) -> dict[str, str]:
    """Batch-complete prompts on one model version, with resume caching."""
    if not pairs:
        raise AuditError(f"{stage}: no pairs to query")

    def compute() -> dict:
        completions, failures = complete_batch(
            endpoint,
            model,
            [(p.id, p.prompt) for p in pairs],
            cfg.max_new_tokens,
            parallelism=cfg.parallelism,
            k_repeat=cfg.k_repeat,
        )
        return {"completions": completions, "failures": failures}

    cache = _cache_for(endpoint, cache)
    key = {
        "model_id": model.model_id,
        "ids": [p.id for p in pairs],
        "max_new_tokens": cfg.max_new_tokens,
        "k_repeat": cfg.k_repeat,
    }
    value = cache.get_or_compute(stage, key, compute) if cache else compute()
    for pair_id, message in sorted(value["failures"].items()):
        logger.warning("%s: completion for %s failed: %s", stage, pair_id, message)
    return value["completions"]


def _check_drops(label: str, total: int, kept: int, cfg: AuditConfig) -> int:
    dropped = total - kept
    if total and dropped / total > cfg.max_drop_fraction:
        raise AuditError(
            f"{label}: dropped {dropped} of {total} samples, above the "
            f"{cfg.max_drop_fraction:.0%} tolerance"
        )
    return dropped


def _finetune_spec(pairs: Sequence[PairRecord], cfg: AuditConfig) -> FineTuneSpec:
    return FineTuneSpec(pairs=tuple(pairs), **cfg.finetune)


def _run_finetune(
    endpoint: Endpoint,
    base: ModelRef,
    pairs: Sequence[PairRecord],
    cfg: AuditConfig,
    stage: str,
    cache: StageCache | None,
) -> tuple[ModelRef, FineTuneJob, str | None]:
    """Submit (or resume) a fine-tune job, wait, and pick the checkpoint."""
    spec = _finetune_spec(pairs, cfg)
    cache = _cache_for(endpoint, cache)
    if cache:
        key = {
            "base": base.model_id,
            "ids": [p.id for p in pairs],
            "hyperparams": spec.hyperparams(),
        }
        submitted = cache.get_or_compute(
            stage, key, lambda: {"job_id": endpoint.start_finetune(base, spec).job_id}
        )
        job = FineTuneJob(
            job_id=submitted["job_id"],
            endpoint=getattr(endpoint, "base_url", base.endpoint),
            status=STATUS_PENDING,
        )
    else:
        job = endpoint.start_finetune(base, spec)
    job = wait_finetune(endpoint, job, poll_interval=cfg.poll_interval)
    if job.status == STATUS_FAILED:
        raise AuditError(f"fine-tune job {job.job_id} failed: {job.error or 'no diagnostics'}")
    choice = select_checkpoint(job)
    return choice.model, job, choice.warning


def _ground_truth_scores(
    pairs: Sequence[PairRecord],
    completions: Mapping[str, str],
    cfg: AuditConfig,
    tag: str,
    scorer,
) -> tuple[ScoreSet, tuple[tuple[str, str], ...]]:
    kept = [(p.id, completions[p.id], p.completion) for p in pairs if p.id in completions]
    scores = tuple(
        score_pair(got, truth, cfg.metric, n=cfg.ngram_n, scorer=scorer).value
        for _, got, truth in kept
    )
    return (
        ScoreSet(scores=scores, dataset_tag=tag, metric=cfg.metric),
        tuple((pair_id, got) for pair_id, got, _ in kept),
    )


def _run_baseline_full(
    endpoint: Endpoint,
    model: ModelRef,
    suspicious_test: Sequence[PairRecord],
    validation_test: Sequence[PairRecord],
    cfg: AuditConfig,
    scorer=None,
    cache: StageCache | None = None,
) -> tuple[BaselineResult, dict]:
    sus = _collect(endpoint, model, suspicious_test, cfg, "baseline-suspicious", cache)
    val = _collect(endpoint, model, validation_test, cfg, "baseline-validation", cache)
    dropped = {
        TAG_SUSPICIOUS: _check_drops("baseline suspicious", len(suspicious_test), len(sus), cfg),
        TAG_VALIDATION: _check_drops("baseline validation", len(validation_test), len(val), cfg),
    }
    sus_set, sus_records = _ground_truth_scores(suspicious_test, sus, cfg, TAG_SUSPICIOUS, scorer)
    val_set, val_records = _ground_truth_scores(validation_test, val, cfg, TAG_VALIDATION, scorer)
    result = BaselineResult(
        mean_score=statistics.fmean(sus_set.scores),
        validation_mean=statistics.fmean(val_set.scores),
        per_sample=sus_set,
        validation_per_sample=val_set,
        ks=stats.ks_two_sample(sus_set, val_set, mode=cfg.ks_mode),
        direction_member=statistics.median(sus_set.scores) > statistics.median(val_set.scores),
    )
    extras = {
        "completions": {TAG_SUSPICIOUS: sus_records, TAG_VALIDATION: val_records},
        "dropped": dropped,
    }
    return result, extras


def run_baseline(
    endpoint: Endpoint,
    model: ModelRef,
    suspicious_test: Sequence[PairRecord],
    validation_test: Sequence[PairRecord],
    cfg: AuditConfig,
    scorer=None,
    cache: StageCache | None = None,
) -> BaselineResult:
    """Completion-accuracy screen on the original model, no fine-tuning.

    Scores every top-1 completion against its ground-truth continuation
    for both datasets and KS-tests the two per-sample score sets.
    direction_member is true when the suspicious scores sit higher.
    """
    result, _ = _run_baseline_full(
        endpoint, model, suspicious_test, validation_test, cfg, scorer=scorer, cache=cache
    )
    return result


def run_catshift(
    endpoint: Endpoint,
    model: ModelRef,
    bundle: CorpusBundle,
    cfg: AuditConfig,
    scorer=None,
    cache: StageCache | None = None,
    baseline: BaselineResult | None = None,
    baseline_extras: dict | None = None,
    started: str | None = None,
) -> AuditReport:
    """The fine-tune shift audit.

    Collects pre completions on the base model, fine-tunes on the
    suspicious training split (and, in paired mode, a fresh copy of the
    base on the validation training split), collects post completions,
    scores the per-prompt shifts, and KS-tests suspicious vs validation
    shift distributions.
    """
    started = started or _now()
    sus_test, val_test = bundle.suspicious_test(), bundle.validation_test()
    sus_train, val_train = bundle.suspicious_finetune(), bundle.validation_finetune()

    pre_s = _collect(endpoint, model, sus_test, cfg, "pre-suspicious", cache)
    pre_v = _collect(endpoint, model, val_test, cfg, "pre-validation", cache)

    warnings: list[str] = []
    f1_s, job_s, warn_s = _run_finetune(endpoint, model, sus_train, cfg, "finetune-suspicious", cache)
    if warn_s:
        warnings.append(warn_s)
    job_ids = [job_s.job_id]
    if cfg.mode == MODE_PAIRED:
        f1_v, job_v, warn_v = _run_finetune(
            endpoint, model, val_train, cfg, "finetune-validation", cache
        )
        if warn_v:
            warnings.append(warn_v)
        job_ids.append(job_v.job_id)
    else:
        f1_v = f1_s

    post_s = _collect(endpoint, f1_s, sus_test, cfg, "post-suspicious", cache)
    post_v = _collect(endpoint, f1_v, val_test, cfg, "post-validation", cache)

    def join(pairs: Sequence[PairRecord], pre: Mapping[str, str], post: Mapping[str, str]):
        return tuple(
            CompletionRecord(pair_id=p.id, pre=pre[p.id], post=post[p.id])
            for p in pairs
            if p.id in pre and p.id in post
        )

    records_s = join(sus_test, pre_s, post_s)
    records_v = join(val_test, pre_v, post_v)
    dropped = {
        TAG_SUSPICIOUS: _check_drops("suspicious shifts", len(sus_test), len(records_s), cfg),
        TAG_VALIDATION: _check_drops("validation shifts", len(val_test), len(records_v), cfg),
    }
    for tag, count in dropped.items():
        if count:
            warnings.append(f"{tag}: dropped {count} samples with failed completions")

    scores_s = shift_score_set(records_s, cfg.metric, TAG_SUSPICIOUS, n=cfg.ngram_n, scorer=scorer)
    scores_v = shift_score_set(records_v, cfg.metric, TAG_VALIDATION, n=cfg.ngram_n, scorer=scorer)
    ks = stats.ks_two_sample(scores_s, scores_v, mode=cfg.ks_mode)
    warnings.extend(endpoint.drain_warnings())

    if baseline_extras:
        for tag, count in baseline_extras["dropped"].items():
            dropped[f"baseline_{tag}"] = count

    metadata = RunMetadata(
        endpoint=getattr(endpoint, "base_url", None) or getattr(endpoint, "locator", ""),
        model_ids={
            "base": model.model_id,
            "finetuned_suspicious": f1_s.model_id,
            "finetuned_validation": f1_v.model_id,
        },
        job_ids=tuple(job_ids),
        seed=cfg.seed,
        config=cfg.to_dict(),
        dataset_id=cfg.dataset_id,
        decoding=_decoding_note(cfg),
        suspicious_finetune_ids=tuple(sorted(p.id for p in sus_train)),
        validation_finetune_ids=tuple(sorted(p.id for p in val_train)),
        timestamps={"started": started, "finished": _now()},
    )
    return AuditReport(
        decision=decide(ks, cfg.alpha),
        decided_by=DECIDED_BY_CATSHIFT,
        ks=ks,
        baseline=baseline,
        suspicious_scores=scores_s,
        validation_scores=scores_v,
        median_shift_direction=(
            statistics.median(scores_v.scores) - statistics.median(scores_s.scores)
        ),
        completions={TAG_SUSPICIOUS: records_s, TAG_VALIDATION: records_v},
        baseline_completions=(baseline_extras or {}).get("completions", {}),
        dropped=dropped,
        warnings=tuple(warnings),
        run_metadata=metadata,
    )


def dual_test(
    endpoint: Endpoint,
    model: ModelRef,
    bundle: CorpusBundle,
    cfg: AuditConfig,
    scorer=None,
    cache: StageCache | None = None,
) -> AuditReport:
    """Baseline screen first; accept its Member verdict only below the
    strict threshold, otherwise the fine-tune audit decides alone."""
    started = _now()
    baseline, extras = _run_baseline_full(
        endpoint,
        model,
        bundle.suspicious_test(),
        bundle.validation_test(),
        cfg,
        scorer=scorer,
        cache=cache,
    )
    if baseline.p_value < cfg.baseline_threshold and baseline.direction_member:
        warnings = tuple(endpoint.drain_warnings())
        metadata = RunMetadata(
            endpoint=getattr(endpoint, "base_url", None) or getattr(endpoint, "locator", ""),
            model_ids={"base": model.model_id},
            job_ids=(),
            seed=cfg.seed,
            config=cfg.to_dict(),
            dataset_id=cfg.dataset_id,
            decoding=_decoding_note(cfg),
            suspicious_finetune_ids=tuple(sorted(p.id for p in bundle.suspicious_finetune())),
            validation_finetune_ids=tuple(sorted(p.id for p in bundle.validation_finetune())),
            timestamps={"started": started, "finished": _now()},
        )
        dropped = {f"baseline_{tag}": count for tag, count in extras["dropped"].items()}
        return AuditReport(
            decision=MEMBER,
            decided_by=DECIDED_BY_BASELINE,
            ks=None,
            baseline=baseline,
            suspicious_scores=None,
            validation_scores=None,
            median_shift_direction=None,
            completions={},
            baseline_completions=extras["completions"],
            dropped=dropped,
            warnings=warnings,
            run_metadata=metadata,
        )
    return run_catshift(
        endpoint,
        model,
        bundle,
        cfg,
        scorer=scorer,
        cache=cache,
        baseline=baseline,
        baseline_extras=extras,
        started=started,
    )


def _ks_to_dict(ks: KsResult | None) -> dict | None:
    if ks is None:
        return None
    return {
        "d_statistic": ks.d_statistic,
        "p_value": ks.p_value,
        "n": ks.n,
        "m": ks.m,
        "mode": ks.mode,
    }


def _score_set_to_dict(scores: ScoreSet | None) -> dict | None:
    if scores is None:
        return None
    return {
        "scores": list(scores.scores),
        "dataset_tag": scores.dataset_tag,
        "metric": scores.metric,
    }


def report_to_dict(report: AuditReport) -> dict:
    baseline = report.baseline
    meta = report.run_metadata
    return {
        "version": REPORT_VERSION,
        "kind": "audit_report",
        "decision": report.decision,
        "decided_by": report.decided_by,
        "p_value": report.p_value,
        "ks": _ks_to_dict(report.ks),
        "baseline": None
        if baseline is None
        else {
            "mean_score": baseline.mean_score,
            "validation_mean": baseline.validation_mean,
            "p_value": baseline.p_value,
            "direction_member": baseline.direction_member,
            "ks": _ks_to_dict(baseline.ks),
            "per_sample": _score_set_to_dict(baseline.per_sample),
            "validation_per_sample": _score_set_to_dict(baseline.validation_per_sample),
        },
        "suspicious_scores": _score_set_to_dict(report.suspicious_scores),
        "validation_scores": _score_set_to_dict(report.validation_scores),
        "median_shift_direction": report.median_shift_direction,
        "completions": {
            tag: [{"pair_id": r.pair_id, "pre": r.pre, "post": r.post} for r in records]
            for tag, records in sorted(report.completions.items())
        },
        "baseline_completions": {
            tag: [{"pair_id": pair_id, "completion": text} for pair_id, text in records]
            for tag, records in sorted(report.baseline_completions.items())
        },
        "dropped": dict(sorted(report.dropped.items())),
        "warnings": list(report.warnings),
        "run_metadata": {
            "endpoint": meta.endpoint,
            "model_ids": dict(sorted(meta.model_ids.items())),
            "job_ids": list(meta.job_ids),
            "seed": meta.seed,
            "config": meta.config,
            "dataset_id": meta.dataset_id,
            "decoding": meta.decoding,
            "suspicious_finetune_ids": list(meta.suspicious_finetune_ids),
            "validation_finetune_ids": list(meta.validation_finetune_ids),
            "timestamps": meta.timestamps,
        },
    }


def _score_rows(report: AuditReport, tag: str) -> list[tuple[str, float]]:
    if report.suspicious_scores is not None:
        records = report.completions.get(tag, ())
        scores = (
            report.suspicious_scores if tag == TAG_SUSPICIOUS else report.validation_scores
        )
        return list(zip((r.pair_id for r in records), scores.scores))
    if report.baseline is None:
        return []
    records = report.baseline_completions.get(tag, ())
    scores = (
        report.baseline.per_sample if tag == TAG_SUSPICIOUS else report.baseline.validation_per_sample
    )
    return list(zip((pair_id for pair_id, _ in records), scores.scores))


def write_report(report: AuditReport, out_dir: Path | str) -> dict[str, Path]:
    """Write report.json plus the per-dataset (pair_id, score) CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"report": out_dir / "report.json"}
    atomic_write_text(paths["report"], dumps_canonical(report_to_dict(report)) + "\n")
    for tag in (TAG_SUSPICIOUS, TAG_VALIDATION):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pair_id", "score"])
        for pair_id, score in _score_rows(report, tag):
            writer.writerow([pair_id, repr(score)])
        path = out_dir / f"{tag}_scores.csv"
        atomic_write_text(path, buf.getvalue())
        paths[f"{tag}_scores"] = path
    return paths


def load_report(path: Path | str) -> dict:
    data = read_json(path)
    if data.get("kind") != "audit_report" or data.get("version") != REPORT_VERSION:
        raise AuditError(f"{path}: not a version-{REPORT_VERSION} audit report")
    return data
