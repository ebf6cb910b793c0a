"""Regenerate the seeded sim fixtures shipped with the repo.

Usage: python3 fixtures/make_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

from catshift.corpus import write_pairs
from catshift.synth import synth_pairs

ROOT = Path(__file__).resolve().parent

BASE_CONFIG = {
    "alpha": 0.1,
    "baseline_threshold": 0.001,
    "metric": "ngram_f1",
    "mode": "paired_finetune",
    "n_finetune": 20,
    "n_test": 30,
    "seed": 11,
    "max_new_tokens": 12,
    "validation_provenance": "fixture corpus generated after the simulated model snapshot",
}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def member_audit() -> None:
    """Suspicious corpus memorized at strength 0.3 but below the recall
    threshold: only the fine-tune audit can expose membership."""
    out = ROOT / "member_audit"
    out.mkdir(parents=True, exist_ok=True)
    write_pairs(synth_pairs(60, seed=1001, prefix="sus"), out / "suspicious.jsonl")
    write_pairs(synth_pairs(60, seed=2002, prefix="val"), out / "validation.jsonl")
    _write_json(
        out / "scenario.json",
        {
            "gain_recover": 0.6,
            "gain_new": 0.1,
            "noise_seed": 7,
            "recall_threshold": 0.5,
            "memory_pairs_path": "suspicious.jsonl",
            "memory_strength": 0.3,
        },
    )
    _write_json(out / "config.json", BASE_CONFIG)


def null_audit() -> None:
    """Two disjoint halves of one non-member corpus playing both roles."""
    out = ROOT / "null_audit"
    out.mkdir(parents=True, exist_ok=True)
    pool = synth_pairs(120, seed=3003, prefix="half")
    write_pairs(pool[:60], out / "suspicious.jsonl")
    write_pairs(pool[60:], out / "validation.jsonl")
    _write_json(
        out / "scenario.json",
        {"gain_recover": 0.6, "gain_new": 0.1, "noise_seed": 7, "recall_threshold": 0.5},
    )
    _write_json(out / "config.json", BASE_CONFIG)


def echo_audit() -> None:
    """Suspicious corpus fully memorized and recalled: the no-fine-tune
    baseline alone is decisive (shortcut path)."""
    out = ROOT / "echo_audit"
    out.mkdir(parents=True, exist_ok=True)
    write_pairs(synth_pairs(60, seed=4004, prefix="sus"), out / "suspicious.jsonl")
    write_pairs(synth_pairs(60, seed=5005, prefix="val"), out / "validation.jsonl")
    _write_json(
        out / "scenario.json",
        {
            "gain_recover": 0.6,
            "gain_new": 0.1,
            "noise_seed": 7,
            "recall_threshold": 0.0,
            "memory_pairs_path": "suspicious.jsonl",
            "memory_strength": 1.0,
        },
    )
    _write_json(out / "config.json", BASE_CONFIG)


def simulate_scenario() -> None:
    out = ROOT / "simulate_small"
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "scenario.json",
        {
            "seed": 5,
            "gains_recover": [0.5, 0.8],
            "gains_new": [0.05, 0.15],
            "strength": 0.3,
            "recall_threshold": 0.5,
            "n_member": 3,
            "n_nonmember": 3,
            "n_pairs": 40,
            "audit": {"n_finetune": 12, "n_test": 20, "max_new_tokens": 10},
        },
    )


if __name__ == "__main__":
    member_audit()
    null_audit()
    echo_audit()
    simulate_scenario()
    print(f"fixtures written under {ROOT}")
