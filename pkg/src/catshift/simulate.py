"""Batch audits against simulated targets over a gain grid.

Synthesizes member and non-member subsets, audits each against a
simulator whose memory is seeded (or not) with the subset, and returns
labeled outcomes for evaluation. Everything derives from the scenario
seed, so a rerun reproduces the batch exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import make_bundle
from .errors import CorpusError
from .evaluation import LABEL_NAMES, LABEL_MEMBER, LABEL_NON_MEMBER, LabeledOutcome
from .inference import AuditConfig, AuditReport, dual_test
from .model.sim import SimEndpoint, SimScenario
from .synth import synth_pairs

_PROVENANCE = "synthetic validation corpus generated independently of the simulated model memory"

_AUDIT_DEFAULTS = {
    "n_finetune": 60,
    "n_test": 100,
    "max_new_tokens": 12,
}


@dataclass(frozen=True)
class SimulateScenario:
    """Grid sweep setup loadable from JSON."""

    seed: int = 1
    gains_recover: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9)
    gains_new: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2)
    strength: float = 0.3
    recall_threshold: float = 0.5
    n_member: int = 20
    n_nonmember: int = 20
    n_pairs: int = 170
    min_tokens: int = 6
    max_tokens: int = 14
    audit: dict = field(default_factory=dict)

    def cells(self) -> list[tuple[float, float]]:
        cells = [
            (recover, new)
            for recover in self.gains_recover
            for new in self.gains_new
            if recover > new
        ]
        if not cells:
            raise ValueError("grid has no cells with gain_recover > gain_new")
        return cells

    def audit_config(self, subset_seed: int, dataset_id: str) -> AuditConfig:
        merged = {**_AUDIT_DEFAULTS, **self.audit, "seed": subset_seed, "dataset_id": dataset_id}
        return AuditConfig.from_dict(merged)


def load_simulate_scenario(path: Path | str) -> SimulateScenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CorpusError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid scenario JSON: {exc.msg}") from exc
    known = set(SimulateScenario.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown simulate scenario keys: {sorted(unknown)}")
    for key in ("gains_recover", "gains_new"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return SimulateScenario(**raw)


def run_subset(
    scenario: SimulateScenario, index: int, member: bool
) -> tuple[str, AuditReport]:
    """Audit one synthetic subset; returns (dataset_id, report)."""
    cells = scenario.cells()
    recover, new = cells[index % len(cells)]
    subset_seed = scenario.seed * 1_000_003 + index
    label = "member" if member else "nonmember"
    dataset_id = f"{label}-{index:03d}"

    suspicious = synth_pairs(
        scenario.n_pairs, subset_seed, scenario.min_tokens, scenario.max_tokens, prefix=f"s{index:03d}"
    )
    validation = synth_pairs(
        scenario.n_pairs,
        subset_seed + 7919,
        scenario.min_tokens,
        scenario.max_tokens,
        prefix=f"v{index:03d}",
    )
    memory = (
        tuple((p.prompt, p.completion, scenario.strength) for p in suspicious) if member else ()
    )
    endpoint = SimEndpoint(
        SimScenario(
            gain_recover=recover,
            gain_new=new,
            noise_seed=subset_seed,
            recall_threshold=scenario.recall_threshold,
            memory=memory,
        )
    )
    cfg = scenario.audit_config(subset_seed, dataset_id)
    bundle = make_bundle(
        suspicious, validation, cfg.n_finetune, cfg.n_test, subset_seed, _PROVENANCE
    )
    report = dual_test(endpoint, endpoint.base_model(), bundle, cfg)
    return dataset_id, report


def run_grid(
    scenario: SimulateScenario,
) -> tuple[list[LabeledOutcome], dict[str, str], list[tuple[str, AuditReport]]]:
    """Run every subset; returns (outcomes, labels-by-id, reports-by-id)."""
    outcomes: list[LabeledOutcome] = []
    labels: dict[str, str] = {}
    reports: list[tuple[str, AuditReport]] = []
    plan = [(i, True) for i in range(scenario.n_member)] + [
        (scenario.n_member + i, False) for i in range(scenario.n_nonmember)
    ]
    for index, member in plan:
        dataset_id, report = run_subset(scenario, index, member)
        label = LABEL_MEMBER if member else LABEL_NON_MEMBER
        labels[dataset_id] = LABEL_NAMES[label]
        outcomes.append(
            LabeledOutcome(dataset_id=dataset_id, true_label=label, p_value=report.p_value)
        )
        reports.append((dataset_id, report))
    return outcomes, labels, reports
