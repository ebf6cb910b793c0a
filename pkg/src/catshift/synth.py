"""Seeded synthetic corpora for simulator runs, fixtures, and tests."""

from __future__ import annotations

import random

from .corpus import PairRecord, TextRecord, make_pairs

_SYLLABLES = (
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "na",
    "pe", "qi", "ro", "su", "ta", "ve", "wi", "xo", "yu", "za",
)


def synth_documents(
    count: int,
    seed: int,
    min_tokens: int = 6,
    max_tokens: int = 14,
    prefix: str = "doc",
) -> list[TextRecord]:
    """Deterministic pseudo-word documents with varied lengths."""
    if min_tokens < 2 or max_tokens < min_tokens:
        raise ValueError("need 2 <= min_tokens <= max_tokens")
    rng = random.Random(seed)
    records = []
    for i in range(count):
        n_tokens = rng.randint(min_tokens, max_tokens)
        words = [
            "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 4)))
            for _ in range(n_tokens)
        ]
        records.append(TextRecord(id=f"{prefix}-{i:04d}", text=" ".join(words)))
    return records


def synth_pairs(
    count: int,
    seed: int,
    min_tokens: int = 6,
    max_tokens: int = 14,
    prefix: str = "doc",
) -> list[PairRecord]:
    """Prefix-mode pairs over synthetic documents."""
    return make_pairs(synth_documents(count, seed, min_tokens, max_tokens, prefix))
