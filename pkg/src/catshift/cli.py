"""Command-line front end: pairs, audit, baseline, simulate, evaluate.

Every command writes its artifacts plus a run manifest into the --out
directory. The audit exit code is scriptable: 0 NonMember, 2 Member,
1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, evaluation, figures
from .corpus import (
    FORMAT_JSONL_PAIRS,
    FORMATS,
    MODES,
    load_corpus,
    make_bundle,
    make_pairs,
    write_pairs,
    write_split_plan,
)
from .errors import CatShiftError
from .inference import (
    AUDIT_MODES,
    AuditConfig,
    MEMBER,
    StageCache,
    dual_test,
    report_to_dict,
    run_baseline,
    write_report,
)
from .ioutil import read_json, write_json
from .manifest import RunManifest
from .model.base import ModelRef, open_endpoint
from .model.http import DEFAULT_TOKEN_ENV, RemoteScorer
from .similarity import METRIC_EMBEDDING, METRICS, TAG_SUSPICIOUS, TAG_VALIDATION
from .simulate import load_simulate_scenario, run_grid

logger = logging.getLogger(__name__)

EXIT_NONMEMBER = 0
EXIT_ERROR = 1
EXIT_MEMBER = 2

#: config keys the CLI consumes itself (everything else configures the audit)
RUN_KEYS = {
    "endpoint",
    "model_id",
    "validation_provenance",
    "api_token_env",
    "scorer_endpoint",
    "format",
    "pairing",
}

_FLAG_KEYS = (
    "seed",
    "metric",
    "mode",
    "alpha",
    "baseline_threshold",
    "n_finetune",
    "n_test",
    "max_new_tokens",
    "parallelism",
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (dotted paths allowed, values parsed as JSON)",
    )
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--endpoint", help="service URL or sim:[scenario.json]")
    parser.add_argument("--metric", choices=METRICS)
    parser.add_argument("--mode", choices=AUDIT_MODES)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--baseline-threshold", type=float)
    parser.add_argument("--n-finetune", type=int)
    parser.add_argument("--n-test", type=int)
    parser.add_argument("--max-new-tokens", type=int)
    parser.add_argument("--parallelism", type=int)


def _apply_override(config: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"--set {key}: {part!r} is not a table")
    node[parts[-1]] = value


def _resolve_config(args: argparse.Namespace) -> dict:
    config: dict = {}
    if args.config:
        loaded = read_json(args.config)
        if not isinstance(loaded, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
        config.update(loaded)
    for item in args.overrides:
        _apply_override(config, item)
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    if getattr(args, "endpoint", None):
        config["endpoint"] = args.endpoint
    return config


def _split_config(raw: dict) -> tuple[dict, AuditConfig]:
    run = {key: raw[key] for key in raw if key in RUN_KEYS}
    audit = {key: value for key, value in raw.items() if key not in RUN_KEYS}
    return run, AuditConfig.from_dict(audit)


def _load_pairs(path: Path, format: str, pairing: dict):
    if format not in FORMATS:
        raise ValueError(f"unknown corpus format {format!r}")
    records = load_corpus(path, format)
    if format == FORMAT_JSONL_PAIRS:
        return records
    known = {"split_ratio", "min_prompt_tokens", "min_completion_tokens", "mode", "instruction_template"}
    unknown = set(pairing) - known
    if unknown:
        raise ValueError(f"unknown pairing keys: {sorted(unknown)}")
    return make_pairs(records, **pairing)


def _open_endpoint(run: dict):
    locator = run.get("endpoint")
    if not locator:
        raise ValueError("no endpoint configured (use --endpoint or the config file)")
    return open_endpoint(locator, token_env=run.get("api_token_env", DEFAULT_TOKEN_ENV))


def _base_model(endpoint, run: dict) -> ModelRef:
    model_id = run.get("model_id")
    if model_id:
        return ModelRef(endpoint=run["endpoint"], model_id=model_id)
    base = getattr(endpoint, "base_model", None)
    if base is not None:
        return base()
    raise ValueError("no model_id configured for a remote endpoint")


def _scorer(run: dict, cfg: AuditConfig):
    if cfg.metric != METRIC_EMBEDDING:
        return None
    url = run.get("scorer_endpoint")
    if not url:
        raise ValueError("embedding metric needs config key 'scorer_endpoint'")
    return RemoteScorer(url, token_env=run.get("api_token_env", DEFAULT_TOKEN_ENV))


def cmd_pairs(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    raw = _resolve_config(args)
    pairing = dict(raw.get("pairing", {}))
    if args.ratio is not None:
        pairing["split_ratio"] = args.ratio
    if args.pair_mode is not None:
        pairing["mode"] = args.pair_mode
    records = _load_pairs(args.input, args.format, pairing)

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    pairs_path = out / "pairs.jsonl"
    write_pairs(records, pairs_path)

    manifest = RunManifest(command="pairs", argv=sys.argv[1:], config={"pairing": pairing})
    manifest.add_input(args.input)
    manifest.add_output(pairs_path)
    manifest.timings["wall_s"] = round(time.monotonic() - t0, 3)
    manifest.write(out / "manifest.json")
    print(f"wrote {len(records)} pairs to {pairs_path}")
    return EXIT_NONMEMBER


def _prepare_audit(args: argparse.Namespace):
    raw = _resolve_config(args)
    run, cfg = _split_config(raw)
    endpoint = _open_endpoint(run)
    model = _base_model(endpoint, run)
    scorer = _scorer(run, cfg)
    format = args.format or run.get("format", FORMAT_JSONL_PAIRS)
    pairing = dict(run.get("pairing", {}))
    suspicious = _load_pairs(args.suspicious, format, pairing)
    validation = _load_pairs(args.validation, format, pairing)
    provenance = args.provenance or run.get("validation_provenance", "")
    bundle = make_bundle(
        suspicious, validation, cfg.n_finetune, cfg.n_test, cfg.seed, provenance
    )
    return run, cfg, endpoint, model, scorer, bundle


def _decisive_sets(report):
    if report.suspicious_scores is not None:
        return report.suspicious_scores, report.validation_scores, report.ks
    baseline = report.baseline
    return baseline.per_sample, baseline.validation_per_sample, baseline.ks


def cmd_audit(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    run, cfg, endpoint, model, scorer, bundle = _prepare_audit(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "work")
    report = dual_test(endpoint, model, bundle, cfg, scorer=scorer, cache=cache)

    paths = write_report(report, out)
    write_split_plan(bundle.suspicious_split, out / "suspicious_split.jsonl")
    write_split_plan(bundle.validation_split, out / "validation_split.jsonl")
    sus_scores, val_scores, ks = _decisive_sets(report)
    figure_paths = [
        figures.save_ecdf_figure(sus_scores, val_scores, ks, out / "figures" / "ecdf.png"),
        figures.save_score_hist(sus_scores, val_scores, out / "figures" / "scores.png"),
    ]

    manifest = RunManifest(command="audit", argv=sys.argv[1:], config=cfg.to_dict())
    for source in (args.suspicious, args.validation, args.config):
        if source:
            manifest.add_input(source)
    for path in list(paths.values()) + figure_paths:
        manifest.add_output(path)
    manifest.add_output(out / "suspicious_split.jsonl")
    manifest.add_output(out / "validation_split.jsonl")
    manifest.timings["wall_s"] = round(time.monotonic() - t0, 3)
    manifest.write(out / "manifest.json")

    print(
        f"decision: {report.decision} (decided_by={report.decided_by}, "
        f"p={report.p_value:.4g}, alpha={cfg.alpha})"
    )
    return EXIT_MEMBER if report.decision == MEMBER else EXIT_NONMEMBER


def cmd_baseline(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    run, cfg, endpoint, model, scorer, bundle = _prepare_audit(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    result = run_baseline(
        endpoint,
        model,
        bundle.suspicious_test(),
        bundle.validation_test(),
        cfg,
        scorer=scorer,
        cache=StageCache(out / "work"),
    )
    verdict_member = result.p_value < cfg.baseline_threshold and result.direction_member
    write_json(
        out / "baseline.json",
        {
            "kind": "baseline_report",
            "version": "1",
            "mean_score": result.mean_score,
            "validation_mean": result.validation_mean,
            "p_value": result.p_value,
            "direction_member": result.direction_member,
            "member_verdict": verdict_member,
            "baseline_threshold": cfg.baseline_threshold,
            "config": cfg.to_dict(),
        },
    )
    figure_paths = [
        figures.save_ecdf_figure(
            result.per_sample, result.validation_per_sample, result.ks, out / "figures" / "ecdf.png"
        ),
        figures.save_score_hist(
            result.per_sample, result.validation_per_sample, out / "figures" / "scores.png"
        ),
    ]
    manifest = RunManifest(command="baseline", argv=sys.argv[1:], config=cfg.to_dict())
    for source in (args.suspicious, args.validation, args.config):
        if source:
            manifest.add_input(source)
    manifest.add_output(out / "baseline.json")
    for path in figure_paths:
        manifest.add_output(path)
    manifest.timings["wall_s"] = round(time.monotonic() - t0, 3)
    manifest.write(out / "manifest.json")
    print(
        f"baseline: p={result.p_value:.4g}, direction_member={result.direction_member}, "
        f"member_verdict={verdict_member}"
    )
    return EXIT_MEMBER if verdict_member else EXIT_NONMEMBER


def cmd_simulate(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    scenario = load_simulate_scenario(args.scenario)
    outcomes, labels, reports = run_grid(scenario)
    out = args.out
    reports_dir = out / "reports"
    for dataset_id, report in reports:
        write_report(report, reports_dir / dataset_id)
    write_json(out / "labels.json", labels)
    figure_path = figures.save_pvalue_figure(outcomes, 0.1, out / "figures" / "pvalues.png")

    manifest = RunManifest(command="simulate", argv=sys.argv[1:], config={"scenario": str(args.scenario)})
    manifest.add_input(args.scenario)
    manifest.add_output(out / "labels.json")
    manifest.add_output(figure_path)
    for dataset_id, _ in reports:
        manifest.add_output(reports_dir / dataset_id / "report.json")
    manifest.timings["wall_s"] = round(time.monotonic() - t0, 3)
    manifest.write(out / "manifest.json")
    members = sum(1 for o in outcomes if o.true_label == evaluation.LABEL_MEMBER)
    print(f"simulated {len(outcomes)} subsets ({members} member) into {reports_dir}")
    return EXIT_NONMEMBER


def cmd_evaluate(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    labels_path = args.labels or (args.reports / "labels.json")
    if not Path(labels_path).exists() and args.labels is None:
        candidate = args.reports.parent / "labels.json"
        if candidate.exists():
            labels_path = candidate
    labels = evaluation.load_labels(labels_path)
    outcomes = evaluation.aggregate_outcomes(evaluation.load_outcomes(args.reports, labels))
    summary = evaluation.f1_at(outcomes, args.threshold)

    out = args.out
    paths = evaluation.write_summary(summary, outcomes, out)
    figure_paths = [
        figures.save_roc_figure(outcomes, out / "figures" / "roc.png"),
        figures.save_pvalue_figure(outcomes, args.threshold, out / "figures" / "pvalues.png"),
    ]
    manifest = RunManifest(
        command="evaluate", argv=sys.argv[1:], config={"threshold": args.threshold}
    )
    manifest.add_input(labels_path)
    for path in list(paths.values()) + figure_paths:
        manifest.add_output(path)
    manifest.timings["wall_s"] = round(time.monotonic() - t0, 3)
    manifest.write(out / "manifest.json")
    tp, fp, tn, fn = summary.confusion
    print(
        f"AUC={summary.auc:.4f} F1={summary.f1:.4f} at threshold {summary.threshold} "
        f"(tp={tp} fp={fp} tn={tn} fn={fn})"
    )
    return EXIT_NONMEMBER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catshift",
        description="Label-only dataset-inference audits against completion + fine-tune APIs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_pairs = sub.add_parser("pairs", help="build prompt/completion pairs from raw text")
    p_pairs.add_argument("--input", type=Path, required=True)
    p_pairs.add_argument("--format", choices=FORMATS, default="text-lines")
    p_pairs.add_argument("--ratio", type=float, help="prompt token fraction (default 0.5)")
    p_pairs.add_argument("--pair-mode", choices=MODES, help="instruction or prefix prompts")
    _add_common(p_pairs)
    p_pairs.set_defaults(func=cmd_pairs)

    for name, func, help_text in (
        ("audit", cmd_audit, "run the dual-test audit (exit 0 NonMember, 2 Member, 1 error)"),
        ("baseline", cmd_baseline, "run only the no-fine-tune baseline screen"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--suspicious", type=Path, required=True)
        p.add_argument("--validation", type=Path, required=True)
        p.add_argument("--format", choices=FORMATS)
        p.add_argument(
            "--provenance",
            help="owner's assertion that the validation corpus is non-member (required here or in config)",
        )
        _add_common(p)
        p.set_defaults(func=func)

    p_sim = sub.add_parser("simulate", help="batch audits against simulated targets")
    p_sim.add_argument("--scenario", type=Path, required=True)
    _add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("evaluate", help="AUC/F1 over a directory of audit reports")
    p_eval.add_argument("--reports", type=Path, required=True)
    p_eval.add_argument("--labels", type=Path, help="ground-truth labels JSON")
    p_eval.add_argument("--threshold", type=float, default=0.1)
    _add_common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CatShiftError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
