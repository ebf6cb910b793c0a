"""Grid simulation batches and figure rendering."""

from __future__ import annotations

import json

import pytest

from catshift.evaluation import LABEL_MEMBER, f1_at
from catshift.figures import save_ecdf_figure, save_pvalue_figure, save_roc_figure, save_score_hist
from catshift.inference import report_to_dict
from catshift.simulate import SimulateScenario, load_simulate_scenario, run_grid, run_subset
from catshift.similarity import ScoreSet
from catshift.stats import ks_two_sample


def _tiny_scenario(**overrides) -> SimulateScenario:
    base = dict(
        seed=5,
        gains_recover=(0.5, 0.8),
        gains_new=(0.05, 0.15),
        n_member=2,
        n_nonmember=2,
        n_pairs=40,
        audit={"n_finetune": 12, "n_test": 20, "max_new_tokens": 10},
    )
    base.update(overrides)
    return SimulateScenario(**base)


def test_grid_separates_members_from_nonmembers():
    outcomes, labels, reports = run_grid(_tiny_scenario())
    assert len(outcomes) == 4 and len(reports) == 4
    members = [o for o in outcomes if o.true_label == LABEL_MEMBER]
    others = [o for o in outcomes if o.true_label != LABEL_MEMBER]
    assert max(o.p_value for o in members) < min(o.p_value for o in others)
    assert set(labels.values()) == {"member", "non_member"}
    summary = f1_at(outcomes, 0.1)
    assert summary.auc == 1.0
    assert summary.confusion[1] == 0  # zero false positives


def test_run_subset_deterministic():
    scenario = _tiny_scenario()
    first_id, first = run_subset(scenario, 0, member=True)
    second_id, second = run_subset(scenario, 0, member=True)
    assert first_id == second_id
    a, b = report_to_dict(first), report_to_dict(second)
    a["run_metadata"]["timestamps"] = b["run_metadata"]["timestamps"] = None
    assert a == b


def test_scenario_loader_rejects_unknown_keys(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"seed": 3, "bogus": 1}), encoding="utf-8")
    with pytest.raises(ValueError, match="bogus"):
        load_simulate_scenario(path)
    path.write_text(json.dumps({"seed": 3, "gains_recover": [0.5], "gains_new": [0.1]}))
    scenario = load_simulate_scenario(path)
    assert scenario.gains_recover == (0.5,)


def test_grid_requires_valid_cells():
    with pytest.raises(ValueError, match="no cells"):
        _tiny_scenario(gains_recover=(0.1,), gains_new=(0.5,)).cells()


def test_figures_render_to_files(tmp_path):
    suspicious = ScoreSet(scores=(0.1, 0.2, 0.3, 0.45), dataset_tag="suspicious", metric="ngram_f1")
    validation = ScoreSet(scores=(0.8, 0.9, 0.95, 1.0), dataset_tag="validation", metric="ngram_f1")
    ks = ks_two_sample(suspicious, validation)
    outcomes, _, _ = run_grid(_tiny_scenario())
    paths = [
        save_ecdf_figure(suspicious, validation, ks, tmp_path / "ecdf.png"),
        save_score_hist(suspicious, validation, tmp_path / "hist.png"),
        save_pvalue_figure(outcomes, 0.1, tmp_path / "pvalues.png"),
        save_roc_figure(outcomes, tmp_path / "roc.png"),
    ]
    for path in paths:
        assert path.exists() and path.stat().st_size > 1000
