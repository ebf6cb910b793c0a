"""Similarity metric tests: hand cases, properties, and the DP-vs-brute LCS oracle."""

from __future__ import annotations

import random

import pytest

from catshift.model.base import CompletionRecord
from catshift.similarity import (
    METRIC_NGRAM_F1,
    score_shift,
    shift_score_set,
    sim_exact,
    sim_lcs_ratio,
    sim_ngram_f1,
)
from oracles import lcs_brute_force


def test_exact_identity_inequality_whitespace():
    assert sim_exact("abc", "abc").value == 1.0
    assert sim_exact("abc", "abd").value == 0.0
    assert sim_exact("a  b", "a b").value == 1.0


def test_ngram_f1_hand_case_two_thirds():
    # unigram multisets {the, cat, sat} vs {the, cat, ran}: overlap 2 of 3
    score = sim_ngram_f1("the cat sat", "the cat ran", n=1)
    assert score.value == pytest.approx(2 / 3, abs=1e-12)
    detail = dict(score.detail)
    assert detail["precision"] == pytest.approx(2 / 3)
    assert detail["recall"] == pytest.approx(2 / 3)


def test_ngram_f1_identity_and_disjoint():
    assert sim_ngram_f1("a b c", "a b c", n=2).value == 1.0
    assert sim_ngram_f1("a b", "c d", n=1).value == 0.0


def test_ngram_f1_short_inputs_fall_back():
    # one token on each side cannot form a bigram; falls back to unigrams
    assert sim_ngram_f1("a", "a", n=2).value == 1.0
    assert sim_ngram_f1("a b c", "a", n=3).value > 0.0


def test_ngram_f1_clipped_counts_resist_repetition():
    spammed = sim_ngram_f1("a a a a a a", "a b c d e f", n=1)
    assert spammed.value == pytest.approx(1 / 6)  # overlap clipped to 1, p = r = 1/6


def test_empty_conventions():
    for fn in (sim_ngram_f1, sim_lcs_ratio):
        assert fn("", "").value == 1.0
        assert fn("a b", "").value == 0.0
        assert fn("", "a b").value == 0.0


def test_lcs_trivial_cases():
    assert sim_lcs_ratio("a b c", "a b c").value == 1.0
    assert sim_lcs_ratio("a b", "c d").value == 0.0


def test_lcs_matches_brute_force_oracle():
    rng = random.Random(17)
    vocab = [f"w{i}" for i in range(6)]
    for _ in range(40):
        ta = [rng.choice(vocab) for _ in range(10)]
        tb = [rng.choice(vocab) for _ in range(10)]
        expected_lcs = lcs_brute_force(ta, tb)
        score = sim_lcs_ratio(" ".join(ta), " ".join(tb))
        precision = expected_lcs / len(ta)
        recall = expected_lcs / len(tb)
        expected = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        assert score.value == pytest.approx(expected, abs=1e-12)


def _random_strings(rng: random.Random, count: int) -> list[str]:
    vocab = [f"w{i}" for i in range(12)]
    return [" ".join(rng.choice(vocab) for _ in range(rng.randint(0, 12))) for _ in range(count)]


def test_symmetry_identity_range_properties():
    rng = random.Random(23)
    strings = _random_strings(rng, 40)
    metrics = (
        lambda a, b: sim_exact(a, b).value,
        lambda a, b: sim_ngram_f1(a, b, 2).value,
        lambda a, b: sim_lcs_ratio(a, b).value,
    )
    for fn in metrics:
        for a, b in zip(strings, reversed(strings)):
            forward, backward = fn(a, b), fn(b, a)
            assert forward == pytest.approx(backward, abs=1e-12)
            assert 0.0 <= forward <= 1.0
        for a in strings:
            if a.strip():
                assert fn(a, a) == 1.0


def test_unigram_f1_permutation_invariance():
    assert sim_ngram_f1("a b c d", "d c b a", n=1).value == 1.0


def test_score_shift_equals_standalone_metric():
    rng = random.Random(31)
    records = [
        CompletionRecord(pair_id=f"p{i}", pre=a, post=b)
        for i, (a, b) in enumerate(zip(_random_strings(rng, 20), _random_strings(rng, 20)))
    ]
    scores = shift_score_set(records, METRIC_NGRAM_F1, "suspicious", n=2)
    for record, value in zip(records, scores.scores):
        assert value == sim_ngram_f1(record.pre, record.post, 2).value
        assert value == score_shift(record, METRIC_NGRAM_F1, n=2).value
    assert scores.dataset_tag == "suspicious"


def test_score_shift_no_shift_and_max_shift():
    same = CompletionRecord(pair_id="a", pre="x y z", post="x y z")
    disjoint = CompletionRecord(pair_id="b", pre="x y", post="u v")
    assert score_shift(same, METRIC_NGRAM_F1).value == 1.0
    assert score_shift(disjoint, METRIC_NGRAM_F1).value == 0.0
