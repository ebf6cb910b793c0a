"""Audit pipeline tests: baseline, shift audit, dual test, reports."""

from __future__ import annotations

import statistics

import pytest

from catshift.errors import AuditError
from catshift.inference import (
    AuditConfig,
    DECIDED_BY_BASELINE,
    DECIDED_BY_CATSHIFT,
    MEMBER,
    MODE_SHARED,
    NON_MEMBER,
    StageCache,
    decide,
    dual_test,
    load_report,
    report_to_dict,
    run_baseline,
    run_catshift,
    write_report,
)
from catshift.corpus import make_bundle
from catshift.stats import KsResult
from catshift.synth import synth_pairs
from helpers import (
    CountingResumableEndpoint,
    FlakyEndpoint,
    PROVENANCE,
    build_bundle,
    seeded_endpoint,
    small_config,
)


def _ks(p: float) -> KsResult:
    return KsResult(d_statistic=0.5, p_value=p, n=10, m=10, mode="asymptotic")


def test_decide_thresholds():
    assert decide(_ks(6.44e-5), 0.1) == MEMBER
    assert decide(_ks(0.711), 0.1) == NON_MEMBER
    assert decide(_ks(0.1), 0.1) == NON_MEMBER  # boundary fails to reject


def test_config_threshold_ordering_enforced():
    with pytest.raises(ValueError, match="baseline_threshold"):
        AuditConfig(alpha=0.1, baseline_threshold=0.2)
    with pytest.raises(ValueError, match="unknown config keys"):
        AuditConfig.from_dict({"alhpa": 0.1})


def test_baseline_member_echo_detected():
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(suspicious, strength=1.0, recall_threshold=0.0)
    result = run_baseline(
        endpoint, endpoint.base_model(), bundle.suspicious_test(), bundle.validation_test(), cfg
    )
    assert result.direction_member
    assert result.p_value < 1e-3
    assert result.mean_score > 0.9 > result.validation_mean


def test_baseline_null_identical_behavior():
    cfg = small_config()
    _, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(())  # nothing memorized: noise everywhere
    result = run_baseline(
        endpoint, endpoint.base_model(), bundle.suspicious_test(), bundle.validation_test(), cfg
    )
    assert result.p_value > 0.5
    assert not result.direction_member


def test_baseline_mean_matches_per_sample_exactly():
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(suspicious, strength=0.6, recall_threshold=0.0)
    result = run_baseline(
        endpoint, endpoint.base_model(), bundle.suspicious_test(), bundle.validation_test(), cfg
    )
    assert result.mean_score == statistics.fmean(result.per_sample.scores)
    assert result.validation_mean == statistics.fmean(result.validation_per_sample.scores)


def test_baseline_hand_built_scores_exact_ks():
    # 4 echoing member samples vs 4 noise samples: scores {1,1,1,1} vs {0,0,0,0},
    # exact KS over the C(8,4) = 70 relabelings gives p = 2/70
    cfg = small_config(n_finetune=2, n_test=4)
    suspicious, _, bundle = build_bundle(cfg, n_pairs=10)
    endpoint = seeded_endpoint(suspicious, strength=1.0, recall_threshold=0.0)
    result = run_baseline(
        endpoint, endpoint.base_model(), bundle.suspicious_test(), bundle.validation_test(), cfg
    )
    assert result.per_sample.scores == (1.0,) * 4
    assert result.validation_per_sample.scores == (0.0,) * 4
    assert result.mean_score == 1.0 and result.validation_mean == 0.0
    assert result.ks.mode == "exact"
    assert result.p_value == pytest.approx(2 / 70, abs=1e-12)


def test_baseline_drop_tolerance():
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    sus_test = bundle.suspicious_test()
    inner = seeded_endpoint(suspicious)
    # fail 4 of 30 suspicious test prompts: 13% > the 10% tolerance
    flaky = FlakyEndpoint(inner, {p.prompt for p in sus_test[:4]})
    with pytest.raises(AuditError, match="above the 10% tolerance"):
        run_baseline(flaky, inner.base_model(), sus_test, bundle.validation_test(), cfg)
    # 2 of 30 is under tolerance: audit proceeds with the drops counted
    flaky_ok = FlakyEndpoint(inner, {p.prompt for p in sus_test[:2]})
    result = run_baseline(flaky_ok, inner.base_model(), sus_test, bundle.validation_test(), cfg)
    assert len(result.per_sample.scores) == 28


def test_catshift_member_detected_paired_mode():
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(suspicious, strength=0.3)
    report = run_catshift(endpoint, endpoint.base_model(), bundle, cfg)
    assert report.ks.p_value < 0.1
    assert report.decision == MEMBER
    assert report.decided_by == DECIDED_BY_CATSHIFT
    assert report.median_shift_direction > 0  # suspicious shifted more
    assert endpoint.jobs_started == 2  # paired mode fine-tunes both corpora


def test_catshift_nonmember_not_flagged():
    cfg = small_config()
    _, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(())
    report = run_catshift(endpoint, endpoint.base_model(), bundle, cfg)
    assert report.ks.p_value >= 0.1
    assert report.decision == NON_MEMBER


def test_catshift_validation_self_audit_null():
    # two disjoint halves of the same non-member corpus play both roles
    cfg = small_config(n_finetune=15, n_test=20)
    pool = synth_pairs(100, 314, prefix="h")
    bundle = make_bundle(pool[:50], pool[50:], cfg.n_finetune, cfg.n_test, cfg.seed, PROVENANCE)
    endpoint = seeded_endpoint(())
    report = run_catshift(endpoint, endpoint.base_model(), bundle, cfg)
    assert report.decision == NON_MEMBER


def test_catshift_shared_mode_single_job():
    cfg = small_config(mode=MODE_SHARED)
    suspicious, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(suspicious, strength=0.3)
    report = run_catshift(endpoint, endpoint.base_model(), bundle, cfg)
    assert endpoint.jobs_started == 1
    assert report.decision == MEMBER
    ids = report.run_metadata.model_ids
    assert ids["finetuned_suspicious"] == ids["finetuned_validation"]


def test_catshift_queried_ids_disjoint_from_finetune_ids():
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(suspicious, strength=0.3)
    report = run_catshift(endpoint, endpoint.base_model(), bundle, cfg)
    queried_sus = {r.pair_id for r in report.completions["suspicious"]}
    queried_val = {r.pair_id for r in report.completions["validation"]}
    assert not queried_sus & set(report.run_metadata.suspicious_finetune_ids)
    assert not queried_val & set(report.run_metadata.validation_finetune_ids)


def test_catshift_determinism_modulo_timestamps():
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    dicts = []
    for _ in range(2):
        endpoint = seeded_endpoint(suspicious, strength=0.3)
        report = run_catshift(endpoint, endpoint.base_model(), bundle, cfg)
        data = report_to_dict(report)
        data["run_metadata"]["timestamps"] = None
        dicts.append(data)
    assert dicts[0] == dicts[1]


def test_monotone_sensitivity_in_recovery_gain():
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    decisions = []
    for gain in (0.3, 0.5, 0.7, 0.9):
        endpoint = seeded_endpoint(suspicious, strength=0.3, gain_recover=gain, gain_new=0.1)
        report = run_catshift(endpoint, endpoint.base_model(), bundle, cfg)
        decisions.append(report.decision)
    assert decisions[0] == MEMBER
    assert all(d == MEMBER for d in decisions)  # raising the gain never flips the verdict


def test_dual_test_shortcut_fires_without_finetuning():
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(suspicious, strength=1.0, recall_threshold=0.0)
    report = dual_test(endpoint, endpoint.base_model(), bundle, cfg)
    assert report.decision == MEMBER
    assert report.decided_by == DECIDED_BY_BASELINE
    assert endpoint.jobs_started == 0
    assert report.ks is None and report.suspicious_scores is None
    assert report.run_metadata.job_ids == ()
    assert report.baseline.p_value < cfg.baseline_threshold


def test_dual_test_defers_to_catshift_when_baseline_uncertain():
    # members are "forgotten" (below the recall threshold): the baseline sees
    # noise on both corpora, so only the fine-tune audit can decide
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(suspicious, strength=0.3, recall_threshold=0.5)
    report = dual_test(endpoint, endpoint.base_model(), bundle, cfg)
    assert report.baseline.p_value >= cfg.baseline_threshold
    assert report.decided_by == DECIDED_BY_CATSHIFT
    assert report.decision == MEMBER
    assert endpoint.jobs_started == 2


def test_dual_test_ignores_baseline_in_wrong_direction():
    # the *validation* corpus echoes ground truth: baseline p is tiny but the
    # direction contradicts membership, so the shortcut must not fire
    cfg = small_config()
    _, validation, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(validation, strength=1.0, recall_threshold=0.0)
    report = dual_test(endpoint, endpoint.base_model(), bundle, cfg)
    assert report.baseline.p_value < cfg.baseline_threshold
    assert not report.baseline.direction_member
    assert report.decided_by == DECIDED_BY_CATSHIFT
    assert report.decision == NON_MEMBER
    assert endpoint.jobs_started == 2


def test_report_write_and_load_roundtrip(tmp_path):
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    endpoint = seeded_endpoint(suspicious, strength=0.3)
    report = dual_test(endpoint, endpoint.base_model(), bundle, cfg)
    paths = write_report(report, tmp_path)
    loaded = load_report(paths["report"])
    assert loaded["decision"] == report.decision
    assert loaded["p_value"] == report.p_value
    assert loaded["version"] == "1"
    csv_lines = paths["suspicious_scores"].read_text().splitlines()
    assert csv_lines[0] == "pair_id,score"
    assert len(csv_lines) - 1 == len(report.suspicious_scores.scores)


def test_stage_cache_resumes_without_requerying(tmp_path):
    cfg = small_config()
    suspicious, _, bundle = build_bundle(cfg)
    inner = seeded_endpoint(suspicious, strength=0.3)
    endpoint = CountingResumableEndpoint(inner)
    cache = StageCache(tmp_path / "work")
    first = run_catshift(endpoint, inner.base_model(), bundle, cfg, cache=cache)
    completes_after_first = endpoint.calls["complete"]
    submits_after_first = endpoint.calls["start_finetune"]
    second = run_catshift(endpoint, inner.base_model(), bundle, cfg, cache=cache)
    assert endpoint.calls["complete"] == completes_after_first  # all stages cached
    assert endpoint.calls["start_finetune"] == submits_after_first
    a, b = report_to_dict(first), report_to_dict(second)
    a["run_metadata"]["timestamps"] = b["run_metadata"]["timestamps"] = None
    assert a == b
