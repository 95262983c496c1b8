import csv
import json
import statistics

import numpy as np
import pytest

from hspkit import experiment
from hspkit.dataset import BENIGN
from hspkit.experiment import (
    ExperimentConfig,
    ExperimentError,
    GroupTooSmall,
    KeyMismatch,
    LeakageError,
    MissingVariant,
    ScenarioSpec,
    adversarial_retrain,
    aggregate_trials,
    run_baseline,
    run_hsp,
)
from hspkit.models import ModelSpec
from hspkit.synth import P0_TAG, P1_TAG


@pytest.fixture(scope="module")
def small(patator):
    """Every malicious row and a third of the benign rows, for quick runs."""
    ds = patator.dataset
    keep = (ds.labels != BENIGN) | (np.arange(len(ds)) % 3 == 0)
    return ds.where(keep)


def cfg(**kw):
    kw.setdefault("trials", 2)
    return ExperimentConfig(ScenarioSpec(P1_TAG, P0_TAG), [ModelSpec("DecisionTree")], **kw)


def test_aggregate_uses_sample_std():
    per = [{("m", "tr", "te"): ("tpr", v)} for v in (0.5, 0.75, 1.0)]
    cell = aggregate_trials(per).get("m", "tr", "te")
    assert cell.mean == pytest.approx(statistics.mean([0.5, 0.75, 1.0]))
    assert cell.std == pytest.approx(statistics.stdev([0.5, 0.75, 1.0]))
    assert cell.values == [0.5, 0.75, 1.0]
    assert aggregate_trials(per[:1]).get("m", "tr", "te").std == 0.0


def test_aggregate_rejects_mismatched_trials():
    with pytest.raises(KeyMismatch):
        aggregate_trials([{("a", "b", "c"): ("tpr", 1.0)}, {("x", "b", "c"): ("tpr", 1.0)}])
    with pytest.raises(ExperimentError):
        aggregate_trials([])


def test_scenario_needs_distinct_operations():
    with pytest.raises(ExperimentError):
        ScenarioSpec("p", "p")
    assert ScenarioSpec(("a", "b"), "c").baseline_name == "a+b"


def test_missing_variant(small):
    with pytest.raises(MissingVariant):
        run_baseline(ExperimentConfig(ScenarioSpec("nope", P0_TAG), [ModelSpec("DecisionTree")]), small)
    with pytest.raises(MissingVariant):
        run_hsp(ExperimentConfig(ScenarioSpec(P1_TAG, "nope"), [ModelSpec("DecisionTree")]), small)


def test_table_shapes(small):
    base = run_baseline(cfg(), small)
    hsp = run_hsp(cfg(), small)
    retr = adversarial_retrain(cfg(), small)
    assert set(base.columns) == {(f"benign+{P1_TAG}", "benign"), (f"benign+{P1_TAG}", P1_TAG)}
    assert set(hsp.columns) == set(base.columns) | {(f"benign+{P1_TAG}", P0_TAG)}
    assert {te for _, te in retr.columns} == {"benign", P1_TAG, P0_TAG}
    assert all(tr == f"benign+{P1_TAG}+{P0_TAG}" for tr, _ in retr.columns)
    for key, cell in base.cells.items():
        assert hsp.cells[key].values == cell.values  # hsp carries the baseline cells unchanged
    assert hsp.get("DecisionTree", f"benign+{P1_TAG}", "benign").metric == "fpr"


def test_trial_t_uses_seed_base_plus_t(small):
    three = run_hsp(cfg(trials=3, base_seed=10), small)
    last = run_hsp(cfg(trials=1, base_seed=12), small)
    for key, cell in last.cells.items():
        assert three.cells[key].values[2] == cell.values[0]


def test_provenance_and_leakage_counting(small):
    before = experiment.LEAKAGE_AUDIT["checks"]
    table = adversarial_retrain(cfg(), small)
    assert table.provenance["leakage_checks"] == 2 * (1 + 3)
    assert table.provenance["leakage_violations"] == 0
    assert table.provenance["config_hash"] == cfg().config_hash()
    assert experiment.LEAKAGE_AUDIT["checks"] - before == 8


def test_leakage_guard_raises():
    stats = {}
    with pytest.raises(LeakageError):
        try:
            experiment._check_disjoint(np.array([1, 2, 3]), np.array([3, 4]), "probe", stats)
        finally:
            experiment.LEAKAGE_AUDIT["violations"] -= 1  # deliberate probe, not a real run
    assert stats["leakage_checks"] == 1


def test_retrain_split_of_perturbed_rows(small):
    p0 = small.with_tags([P0_TAG])
    tr, te = experiment._split_perturbed(p0, 0.8, seed=0)
    assert len(tr) == int(np.floor(0.8 * len(p0) + 0.5)) and len(tr) + len(te) == len(p0)
    tr, te = experiment._split_perturbed(p0, 0.0, seed=0)
    assert len(tr) == 0 and len(te) == len(p0)
    with pytest.raises(GroupTooSmall):
        experiment._split_perturbed(p0.take([0]), 0.8, seed=0)


def test_retrain_with_single_perturbed_row_fails(small):
    p0_pos = np.flatnonzero(small.tags == P0_TAG)
    keep = np.ones(len(small), dtype=bool)
    keep[p0_pos[1:]] = False
    with pytest.raises(GroupTooSmall):
        adversarial_retrain(cfg(), small.where(keep))


def test_config_hash_tracks_content():
    assert cfg().config_hash() == cfg().config_hash()
    assert cfg().config_hash() != cfg(trials=3).config_hash()


def test_csv_and_json_outputs(small, tmp_path):
    table = run_hsp(cfg(), small)
    table.to_csv(tmp_path / "r.csv")
    table.to_json(tmp_path / "r.json")
    rows = list(csv.reader(open(tmp_path / "r.csv", newline="")))
    assert rows[0][0] == "model"
    assert f"benign+{P1_TAG} | benign | fpr" in rows[0]
    assert f"benign+{P1_TAG} | {P0_TAG} | tpr std" in rows[0]
    assert [r[0] for r in rows[1:]] == ["DecisionTree"]
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["trials"] == 2 and len(doc["cells"]) == 3
    assert "train: benign+" in table.render()
