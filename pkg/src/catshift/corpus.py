"""Corpus ingestion, prompt/completion pairing, and fine-tune/test split plans.

Raw documents become (prompt, completion) pairs by cutting each document
at a token position; the pairs are then partitioned into a disjoint
fine-tune subset and test subset under a seeded, reproducible plan.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CorpusError
from .ioutil import atomic_write_text

logger = logging.getLogger(__name__)

FORMAT_TEXT_LINES = "text-lines"
FORMAT_JSONL_TEXT = "jsonl-text"
FORMAT_JSONL_PAIRS = "jsonl-pairs"
FORMATS = (FORMAT_TEXT_LINES, FORMAT_JSONL_TEXT, FORMAT_JSONL_PAIRS)

MODE_INSTRUCTION = "instruction"
MODE_PREFIX = "prefix"
MODES = (MODE_INSTRUCTION, MODE_PREFIX)

DEFAULT_INSTRUCTION_TEMPLATE = "Complete the following text: "

SPLIT_PLAN_VERSION = "1"
PAIR_FILE_VERSION = "1"


@dataclass(frozen=True)
class TextRecord:
    """One raw document with a stable identifier."""

    id: str
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError(f"record {self.id!r}: text empty after trimming")


@dataclass(frozen=True)
class PairRecord:
    """A prompt/completion pair derived from one document.

    In prefix mode ``prompt + " " + completion`` reproduces the
    whitespace-normalized source text exactly.
    """

    id: str
    prompt: str
    completion: str
    mode: str = MODE_PREFIX

    def __post_init__(self):
        if not self.prompt:
            raise CorpusError(f"pair {self.id!r}: empty prompt")
        if not self.completion:
            raise CorpusError(f"pair {self.id!r}: empty completion")
        if self.mode not in MODES:
            raise CorpusError(f"pair {self.id!r}: unknown mode {self.mode!r}")


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint fine-tune/test id sets drawn under a fixed seed."""

    finetune_ids: frozenset[str]
    test_ids: frozenset[str]
    seed: int
    n_finetune: int
    n_test: int

    def __post_init__(self):
        if self.finetune_ids & self.test_ids:
            raise CorpusError("split plan has overlapping fine-tune and test ids")
        if len(self.finetune_ids) != self.n_finetune or len(self.test_ids) != self.n_test:
            raise CorpusError(
                "split plan sizes do not match declared counts: "
                f"{len(self.finetune_ids)}/{self.n_finetune} fine-tune, "
                f"{len(self.test_ids)}/{self.n_test} test"
            )


@dataclass(frozen=True)
class CorpusBundle:
    """The two audited corpora plus their split plans.

    ``validation_provenance`` is the owner's free-text assertion that the
    validation corpus never appeared in the target model's training data.
    It is required but not verified by the tool.
    """

    suspicious: tuple[PairRecord, ...]
    validation: tuple[PairRecord, ...]
    suspicious_split: SplitPlan
    validation_split: SplitPlan
    validation_provenance: str

    def __post_init__(self):
        if not self.validation_provenance.strip():
            raise CorpusError("validation provenance note is required")
        _check_cover("suspicious", self.suspicious, self.suspicious_split)
        _check_cover("validation", self.validation, self.validation_split)

    def suspicious_finetune(self) -> tuple[PairRecord, ...]:
        return _select(self.suspicious, self.suspicious_split.finetune_ids)

    def suspicious_test(self) -> tuple[PairRecord, ...]:
        return _select(self.suspicious, self.suspicious_split.test_ids)

    def validation_finetune(self) -> tuple[PairRecord, ...]:
        return _select(self.validation, self.validation_split.finetune_ids)

    def validation_test(self) -> tuple[PairRecord, ...]:
        return _select(self.validation, self.validation_split.test_ids)


def _select(pairs: Sequence[PairRecord], ids: frozenset[str]) -> tuple[PairRecord, ...]:
    """Subset by id, preserving corpus order."""
    return tuple(p for p in pairs if p.id in ids)


def _check_cover(tag: str, pairs: Sequence[PairRecord], plan: SplitPlan) -> None:
    known = {p.id for p in pairs}
    missing = (plan.finetune_ids | plan.test_ids) - known
    if missing:
        raise CorpusError(f"{tag} split references unknown pair ids: {sorted(missing)[:5]}")


def load_corpus(path: Path | str, format: str) -> list[TextRecord] | list[PairRecord]:
    """Load a corpus file in one of the supported line-oriented formats.

    Blank lines are skipped; ids default to ``<filename>#<line>`` when the
    format carries none. Malformed lines raise with their line number.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown corpus format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    records: list = []
    seen_ids: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        where = f"{path.name}:{lineno}"
        default_id = f"{path.name}#{lineno}"
        if format == FORMAT_TEXT_LINES:
            rec = TextRecord(id=default_id, text=raw)
        else:
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{where}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{where}: expected a JSON object")
            rec_id = obj.get("id", default_id)
            if not isinstance(rec_id, str) or not rec_id:
                raise CorpusError(f"{where}: id must be a non-empty string")
            try:
                if format == FORMAT_JSONL_TEXT:
                    text = obj.get("text")
                    if not isinstance(text, str):
                        raise CorpusError(f"{where}: missing string field 'text'")
                    rec = TextRecord(id=rec_id, text=text)
                else:
                    prompt = obj.get("prompt")
                    completion = obj.get("completion")
                    if not isinstance(prompt, str) or not isinstance(completion, str):
                        raise CorpusError(f"{where}: need string fields 'prompt' and 'completion'")
                    rec = PairRecord(
                        id=rec_id,
                        prompt=prompt,
                        completion=completion,
                        mode=obj.get("mode", MODE_PREFIX),
                    )
            except CorpusError as exc:
                raise CorpusError(f"{where}: {exc}") from None
        if rec.id in seen_ids:
            raise CorpusError(f"{where}: duplicate id {rec.id!r}")
        seen_ids.add(rec.id)
        records.append(rec)

    if not records:
        raise CorpusError(f"{path}: empty corpus")
    return records


def make_pairs(
    records: Iterable[TextRecord],
    split_ratio: float = 0.5,
    min_prompt_tokens: int = 1,
    min_completion_tokens: int = 1,
    mode: str = MODE_PREFIX,
    instruction_template: str = DEFAULT_INSTRUCTION_TEMPLATE,
) -> list[PairRecord]:
    """Cut each document into a prompt and a completion at a token position.

    Tokenization is whitespace-based so the cut is deterministic and does
    not assume anything about the target model's tokenizer. The prompt
    takes the first ``floor(split_ratio * n_tokens)`` tokens; in
    instruction mode the template is prepended verbatim. Records too
    short to satisfy both minima are dropped (and counted in the log).
    """
    if not 0.0 < split_ratio < 1.0:
        raise ValueError(f"split_ratio must be in (0, 1), got {split_ratio}")
    if mode not in MODES:
        raise ValueError(f"unknown pairing mode {mode!r}; expected one of {MODES}")
    if min_prompt_tokens < 1 or min_completion_tokens < 1:
        raise ValueError("length minima must be >= 1")

    records = list(records)
    pairs: list[PairRecord] = []
    dropped = 0
    for rec in records:
        tokens = rec.text.split()
        cut = math.floor(split_ratio * len(tokens))
        prompt_tokens, completion_tokens = tokens[:cut], tokens[cut:]
        if len(prompt_tokens) < min_prompt_tokens or len(completion_tokens) < min_completion_tokens:
            dropped += 1
            continue
        prompt = " ".join(prompt_tokens)
        if mode == MODE_INSTRUCTION:
            prompt = instruction_template + prompt
        pairs.append(
            PairRecord(id=rec.id, prompt=prompt, completion=" ".join(completion_tokens), mode=mode)
        )
    if dropped:
        logger.info("make_pairs: dropped %d of %d records below length minima", dropped, len(records))
    if not pairs:
        raise CorpusError(
            f"corpus too short: all {len(records)} records dropped by length minima"
        )
    return pairs


def split_dataset(
    pairs: Sequence[PairRecord], n_finetune: int, n_test: int, seed: int
) -> SplitPlan:
    """Draw disjoint fine-tune/test subsets, uniformly at random under ``seed``.

    Deterministic given the pair order and the seed; the RNG consumption
    is a fixed partial Fisher-Yates so plans stay reproducible across
    interpreter versions.
    """
    if n_finetune < 1 or n_test < 1:
        raise ValueError("n_finetune and n_test must be >= 1")
    need = n_finetune + n_test
    if need > len(pairs):
        raise CorpusError(
            f"split requires {need} pairs ({n_finetune} fine-tune + {n_test} test) "
            f"but the corpus has {len(pairs)}"
        )
    ids = [p.id for p in pairs]
    if len(set(ids)) != len(ids):
        raise CorpusError("corpus has duplicate pair ids; cannot split")

    rng = random.Random(seed)
    order = list(range(len(pairs)))
    for i in range(need):
        j = i + rng.randrange(len(order) - i)
        order[i], order[j] = order[j], order[i]
    picked = order[:need]
    return SplitPlan(
        finetune_ids=frozenset(ids[k] for k in picked[:n_finetune]),
        test_ids=frozenset(ids[k] for k in picked[n_finetune:]),
        seed=seed,
        n_finetune=n_finetune,
        n_test=n_test,
    )


def make_bundle(
    suspicious: Sequence[PairRecord],
    validation: Sequence[PairRecord],
    n_finetune: int,
    n_test: int,
    seed: int,
    validation_provenance: str,
    validation_n_finetune: int | None = None,
    validation_n_test: int | None = None,
) -> CorpusBundle:
    """Build a bundle with mirrored split sizes unless overridden.

    The validation split uses a seed derived from ``seed`` so the two
    plans are independent draws but the whole bundle stays a pure
    function of (corpora, seed).
    """
    if validation_n_finetune is None:
        validation_n_finetune = n_finetune
    if validation_n_test is None:
        validation_n_test = n_test
    return CorpusBundle(
        suspicious=tuple(suspicious),
        validation=tuple(validation),
        suspicious_split=split_dataset(suspicious, n_finetune, n_test, seed),
        validation_split=split_dataset(
            validation, validation_n_finetune, validation_n_test, seed ^ 0x9E3779B97F4A7C15
        ),
        validation_provenance=validation_provenance,
    )


def write_split_plan(plan: SplitPlan, path: Path | str) -> None:
    """Serialize a split plan to its versioned jsonl sidecar."""
    lines = [
        json.dumps(
            {
                "version": SPLIT_PLAN_VERSION,
                "kind": "split_plan",
                "seed": plan.seed,
                "n_finetune": plan.n_finetune,
                "n_test": plan.n_test,
            },
            sort_keys=True,
        )
    ]
    for role, ids in (("finetune", plan.finetune_ids), ("test", plan.test_ids)):
        for rec_id in sorted(ids):
            lines.append(json.dumps({"id": rec_id, "role": role}, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_split_plan(path: Path | str) -> SplitPlan:
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise CorpusError(f"{path}: empty split plan")
    header = json.loads(lines[0])
    if header.get("kind") != "split_plan" or header.get("version") != SPLIT_PLAN_VERSION:
        raise CorpusError(f"{path}: not a version-{SPLIT_PLAN_VERSION} split plan")
    roles: dict[str, set[str]] = {"finetune": set(), "test": set()}
    for lineno, raw in enumerate(lines[1:], start=2):
        row = json.loads(raw)
        role = row.get("role")
        if role not in roles:
            raise CorpusError(f"{path.name}:{lineno}: unknown role {role!r}")
        roles[role].add(row["id"])
    return SplitPlan(
        finetune_ids=frozenset(roles["finetune"]),
        test_ids=frozenset(roles["test"]),
        seed=header["seed"],
        n_finetune=header["n_finetune"],
        n_test=header["n_test"],
    )


def write_pairs(pairs: Sequence[PairRecord], path: Path | str) -> None:
    """Write pairs as jsonl usable as the jsonl-pairs input format."""
    lines = [
        json.dumps(
            {"id": p.id, "prompt": p.prompt, "completion": p.completion, "mode": p.mode},
            sort_keys=True,
            ensure_ascii=False,
        )
        for p in pairs
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")
