"""Scalar similarity between two strings, the pre/post output-shift metric.

All lexical metrics tokenize on whitespace, are symmetric, score 1 for
identical inputs, and live in [0, 1]. Empty-input conventions: both
empty -> 1, exactly one empty -> 0.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .model.base import CompletionRecord

METRIC_EXACT = "exact"
METRIC_NGRAM_F1 = "ngram_f1"
METRIC_LCS_RATIO = "lcs_ratio"
METRIC_EMBEDDING = "embedding"
METRICS = (METRIC_EXACT, METRIC_NGRAM_F1, METRIC_LCS_RATIO, METRIC_EMBEDDING)

DEFAULT_METRIC = METRIC_NGRAM_F1
DEFAULT_NGRAM_N = 2

TAG_SUSPICIOUS = "suspicious"
TAG_VALIDATION = "validation"


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    metric: str
    detail: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"similarity must be in [0, 1], got {self.value}")


@dataclass(frozen=True)
class ScoreSet:
    """The multiset of per-sample similarity scores for one dataset."""

    scores: tuple[float, ...]
    dataset_tag: str
    metric: str


def _tokens(text: str) -> list[str]:
    return text.split()


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _f1_score(overlap: float, size_a: int, size_b: int, metric: str) -> SimilarityScore:
    precision = overlap / size_a
    recall = overlap / size_b
    value = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return SimilarityScore(
        value=value, metric=metric, detail=(("precision", precision), ("recall", recall))
    )


def _empty_case(ta: Sequence[str], tb: Sequence[str], metric: str) -> SimilarityScore | None:
    if not ta and not tb:
        return SimilarityScore(1.0, metric)
    if not ta or not tb:
        return SimilarityScore(0.0, metric)
    return None


def sim_exact(a: str, b: str) -> SimilarityScore:
    """1 when the whitespace-normalized strings are equal, else 0."""
    return SimilarityScore(1.0 if _normalize(a) == _normalize(b) else 0.0, METRIC_EXACT)


def sim_ngram_f1(a: str, b: str, n: int = DEFAULT_NGRAM_N) -> SimilarityScore:
    """F1 over n-gram multisets with clipped counts.

    When either side has fewer than n tokens, n falls back to the shorter
    token count so matching stays possible for short outputs.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ta, tb = _tokens(a), _tokens(b)
    empty = _empty_case(ta, tb, METRIC_NGRAM_F1)
    if empty is not None:
        return empty
    n_eff = min(n, len(ta), len(tb))
    grams_a = Counter(tuple(ta[i : i + n_eff]) for i in range(len(ta) - n_eff + 1))
    grams_b = Counter(tuple(tb[i : i + n_eff]) for i in range(len(tb) - n_eff + 1))
    overlap = sum((grams_a & grams_b).values())
    return _f1_score(overlap, sum(grams_a.values()), sum(grams_b.values()), METRIC_NGRAM_F1)


def _lcs_length(ta: Sequence[str], tb: Sequence[str]) -> int:
    # Row-rolling dynamic program; O(len(ta) * len(tb)).
    previous = [0] * (len(tb) + 1)
    for tok_a in ta:
        current = [0]
        for j, tok_b in enumerate(tb, start=1):
            if tok_a == tok_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def sim_lcs_ratio(a: str, b: str) -> SimilarityScore:
    """F1 built from the token-level longest common subsequence."""
    ta, tb = _tokens(a), _tokens(b)
    empty = _empty_case(ta, tb, METRIC_LCS_RATIO)
    if empty is not None:
        return empty
    return _f1_score(_lcs_length(ta, tb), len(ta), len(tb), METRIC_LCS_RATIO)


def sim_embedding(a: str, b: str, scorer) -> SimilarityScore:
    """Remote semantic score passed through (the scorer clamps to [0, 1])."""
    return SimilarityScore(scorer.similarity(a, b), METRIC_EMBEDDING)


def score_pair(a: str, b: str, metric: str, n: int = DEFAULT_NGRAM_N, scorer=None) -> SimilarityScore:
    if metric == METRIC_EXACT:
        return sim_exact(a, b)
    if metric == METRIC_NGRAM_F1:
        return sim_ngram_f1(a, b, n)
    if metric == METRIC_LCS_RATIO:
        return sim_lcs_ratio(a, b)
    if metric == METRIC_EMBEDDING:
        if scorer is None:
            raise ValueError("embedding metric requires a remote scorer")
        return sim_embedding(a, b, scorer)
    raise ValueError(f"unknown similarity metric {metric!r}; expected one of {METRICS}")


def score_shift(
    rec: CompletionRecord, metric: str, n: int = DEFAULT_NGRAM_N, scorer=None
) -> SimilarityScore:
    """Similarity of the pre- and post-fine-tune completions for one pair.

    Lower values mean a larger output shift.
    """
    return score_pair(rec.pre, rec.post, metric, n=n, scorer=scorer)


def shift_score_set(
    records: Sequence[CompletionRecord],
    metric: str,
    dataset_tag: str,
    n: int = DEFAULT_NGRAM_N,
    scorer=None,
) -> ScoreSet:
    return ScoreSet(
        scores=tuple(score_shift(rec, metric, n=n, scorer=scorer).value for rec in records),
        dataset_tag=dataset_tag,
        metric=metric,
    )
