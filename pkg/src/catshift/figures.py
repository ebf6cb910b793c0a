"""Matplotlib renderings emitted next to the delimited report outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import LABEL_MEMBER, LabeledOutcome
from .similarity import ScoreSet
from .stats import KsResult, ecdf

_SUSPICIOUS_COLOR = "#c0392b"
_VALIDATION_COLOR = "#2874a6"


def _step_xy(scores: ScoreSet) -> tuple[list[float], list[float]]:
    points = ecdf(scores)
    xs = [x for x, _ in points]
    ys = [y for _, y in points]
    return xs, ys


def save_ecdf_figure(
    suspicious: ScoreSet, validation: ScoreSet, ks: KsResult, path: Path | str
) -> Path:
    """Overlay the two shift-score ECDFs with the KS result in the title."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for scores, color, label in (
        (suspicious, _SUSPICIOUS_COLOR, f"suspicious (m={len(suspicious.scores)})"),
        (validation, _VALIDATION_COLOR, f"validation (n={len(validation.scores)})"),
    ):
        xs, ys = _step_xy(scores)
        ax.step([0.0] + xs + [1.0], [0.0] + ys + [ys[-1]], where="post", color=color, label=label)
    ax.set_xlabel(f"similarity ({suspicious.metric})")
    ax.set_ylabel("empirical CDF")
    ax.set_title(f"D = {ks.d_statistic:.3f}, p = {ks.p_value:.3g} ({ks.mode})")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def save_score_hist(suspicious: ScoreSet, validation: ScoreSet, path: Path | str) -> Path:
    bins = np.linspace(0.0, 1.0, 21)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(
        suspicious.scores, bins=bins, alpha=0.6, color=_SUSPICIOUS_COLOR, label="suspicious"
    )
    ax.hist(
        validation.scores, bins=bins, alpha=0.6, color=_VALIDATION_COLOR, label="validation"
    )
    ax.set_xlabel(f"similarity ({suspicious.metric})")
    ax.set_ylabel("count")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def save_pvalue_figure(
    outcomes: Sequence[LabeledOutcome], threshold: float, path: Path | str
) -> Path:
    """Per-dataset p-values on a log axis, colored by ground-truth label."""
    ordered = sorted(outcomes, key=lambda o: (o.true_label, o.dataset_id))
    xs = np.arange(len(ordered))
    floor = 1e-12
    values = [max(o.p_value, floor) for o in ordered]
    colors = [
        _SUSPICIOUS_COLOR if o.true_label == LABEL_MEMBER else _VALIDATION_COLOR for o in ordered
    ]
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(ordered)), 4))
    ax.bar(xs, values, color=colors)
    ax.axhline(threshold, color="black", linestyle="--", linewidth=1, label=f"threshold {threshold}")
    ax.set_yscale("log")
    ax.set_ylabel("p-value (log scale)")
    ax.set_xticks(xs)
    ax.set_xticklabels([o.dataset_id for o in ordered], rotation=90, fontsize=6)
    ax.legend()
    return _save(fig, path)


def save_roc_figure(outcomes: Sequence[LabeledOutcome], path: Path | str) -> Path:
    """ROC for the member class using 1 - p as the decision score."""
    labels = np.array([1 if o.true_label == LABEL_MEMBER else 0 for o in outcomes])
    scores = np.array([1.0 - o.p_value for o in outcomes])
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    tpr = np.concatenate([[0.0], np.cumsum(labels) / max(1, labels.sum())])
    fpr = np.concatenate([[0.0], np.cumsum(1 - labels) / max(1, (1 - labels).sum())])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(fpr, tpr, color=_SUSPICIOUS_COLOR)
    ax.plot([0, 1], [0, 1], color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def _save(fig, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
