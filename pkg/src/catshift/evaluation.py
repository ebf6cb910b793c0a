"""Multi-dataset evaluation: p-values as non-membership scores -> AUC / F1.

Each audited subset contributes one labeled outcome; its p-value plays
the role of a score for the non-member class (members are expected to
get small p-values).
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AuditError
from .inference import load_report
from .ioutil import atomic_write_text, read_json, write_json

LABEL_MEMBER = 0
LABEL_NON_MEMBER = 1
LABEL_NAMES = {LABEL_MEMBER: "member", LABEL_NON_MEMBER: "non_member"}
NAME_LABELS = {name: label for label, name in LABEL_NAMES.items()}


@dataclass(frozen=True)
class LabeledOutcome:
    dataset_id: str
    true_label: int
    p_value: float

    def __post_init__(self):
        if self.true_label not in LABEL_NAMES:
            raise ValueError(f"unknown label {self.true_label}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value out of range: {self.p_value}")


@dataclass(frozen=True)
class MetricsSummary:
    auc: float
    f1: float
    threshold: float
    confusion: tuple[int, int, int, int]  # (tp, fp, tn, fn), member = positive

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0 or not 0.0 <= self.f1 <= 1.0:
            raise ValueError("auc and f1 must be in [0, 1]")


def auc(outcomes: Sequence[LabeledOutcome]) -> float:
    """Probability a random non-member outranks a random member in p-value.

    Rank formulation with ties counting one half.
    """
    members = [o.p_value for o in outcomes if o.true_label == LABEL_MEMBER]
    non_members = [o.p_value for o in outcomes if o.true_label == LABEL_NON_MEMBER]
    if not members or not non_members:
        raise ValueError("AUC needs at least one outcome of each label")
    pooled = np.asarray(non_members + members, dtype=float)
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(pooled.size, dtype=float)
    # average ranks over tie groups (1-based)
    sorted_vals = pooled[order]
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    r_non = ranks[: len(non_members)].sum()
    u_non = r_non - len(non_members) * (len(non_members) + 1) / 2.0
    return float(u_non) / (len(non_members) * len(members))


def f1_at(outcomes: Sequence[LabeledOutcome], threshold: float) -> MetricsSummary:
    """Binarize at ``p < threshold -> member`` and score the member class.

    A false positive is a non-member subset flagged as member.
    """
    tp = fp = tn = fn = 0
    for o in outcomes:
        predicted_member = o.p_value < threshold
        if o.true_label == LABEL_MEMBER:
            tp += predicted_member
            fn += not predicted_member
        else:
            fp += predicted_member
            tn += not predicted_member
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return MetricsSummary(
        auc=auc(outcomes), f1=f1, threshold=threshold, confusion=(tp, fp, tn, fn)
    )


def aggregate_outcomes(
    outcomes: Iterable[LabeledOutcome], how: str = "median"
) -> list[LabeledOutcome]:
    """Collapse repeated audits of the same dataset (default: median p)."""
    if how != "median":
        raise ValueError(f"unknown aggregation {how!r}")
    grouped: dict[str, list[LabeledOutcome]] = {}
    for outcome in outcomes:
        grouped.setdefault(outcome.dataset_id, []).append(outcome)
    collapsed = []
    for dataset_id in sorted(grouped):
        group = grouped[dataset_id]
        labels = {o.true_label for o in group}
        if len(labels) != 1:
            raise AuditError(f"dataset {dataset_id!r} has conflicting labels across repeats")
        collapsed.append(
            LabeledOutcome(
                dataset_id=dataset_id,
                true_label=group[0].true_label,
                p_value=statistics.median(o.p_value for o in group),
            )
        )
    return collapsed


def load_labels(path: Path | str) -> dict[str, int]:
    """Load {dataset_id: "member" | "non_member"} ground truth."""
    raw = read_json(path)
    labels = {}
    for dataset_id, name in raw.items():
        if name not in NAME_LABELS:
            raise AuditError(f"label for {dataset_id!r} must be one of {sorted(NAME_LABELS)}")
        labels[dataset_id] = NAME_LABELS[name]
    return labels


def load_outcomes(reports_dir: Path | str, labels: Mapping[str, int]) -> list[LabeledOutcome]:
    """Read every audit report under a directory into labeled outcomes.

    The report's deciding p-value is the non-membership score; dataset
    ids come from the report metadata.
    """
    reports_dir = Path(reports_dir)
    outcomes = []
    for path in sorted(reports_dir.glob("**/*.json")):
        data = read_json(path)
        if data.get("kind") != "audit_report":
            continue
        data = load_report(path)
        dataset_id = data["run_metadata"].get("dataset_id") or path.stem
        if dataset_id not in labels:
            raise AuditError(f"no ground-truth label for dataset {dataset_id!r}")
        outcomes.append(
            LabeledOutcome(
                dataset_id=dataset_id,
                true_label=labels[dataset_id],
                p_value=float(data["p_value"]),
            )
        )
    if not outcomes:
        raise AuditError(f"no audit reports found under {reports_dir}")
    return outcomes


def write_summary(
    summary: MetricsSummary, outcomes: Sequence[LabeledOutcome], out_dir: Path | str
) -> dict[str, Path]:
    """Emit summary JSON plus the per-dataset outcomes CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tp, fp, tn, fn = summary.confusion
    write_json(
        out_dir / "summary.json",
        {
            "kind": "evaluation_summary",
            "version": "1",
            "auc": summary.auc,
            "f1": summary.f1,
            "threshold": summary.threshold,
            "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
            "n_outcomes": len(outcomes),
        },
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset_id", "label", "p_value", "prediction"])
    for o in sorted(outcomes, key=lambda o: o.dataset_id):
        prediction = "member" if o.p_value < summary.threshold else "non_member"
        writer.writerow([o.dataset_id, LABEL_NAMES[o.true_label], repr(o.p_value), prediction])
    atomic_write_text(out_dir / "outcomes.csv", buf.getvalue())
    return {"summary": out_dir / "summary.json", "outcomes": out_dir / "outcomes.csv"}
