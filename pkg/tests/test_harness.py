import logging

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from citeye.errors import EmptyDataset, TooFewParticipants
from citeye.features import FeatureGroup
from citeye.harness import (
    CIT_CLASS_COUNTS,
    LEARNING_RATE_RANGE,
    MAX_DEPTHS,
    MIN_CHILD_WEIGHTS,
    REGULARIZATION_GRID,
    ConditionReport,
    Task,
    TaskSpec,
    audit_stages,
    baseline_from_counts,
    dummy_baseline,
    make_split_plan,
    run_condition,
    run_matrix,
    sample_params,
    select_best,
    split_grouped,
    task_data,
)
from citeye.explain import aggregate_top5

from conftest import toy_frame


def test_task_classes():
    assert Task.BINARY.classes == ("Revealing", "Concealing")
    assert Task.THREE_CLASS.classes == ("Revealing", "Concealing", "Faking")
    assert Task.parse("three-class") is Task.THREE_CLASS


def test_task_data_drops_faking_for_binary():
    frame = toy_frame(5, 2)
    d = task_data(frame, Task.BINARY, FeatureGroup.PUPIL)
    assert d.X.shape == (20, 53) and set(d.y.tolist()) == {0, 1}
    assert task_data(frame, "three_class", "eye").X.shape == (30, 7)


@pytest.mark.parametrize(
    "dataset,task,expected",
    [("EyelinkLike", Task.BINARY, 0.500), ("NeonLike", Task.BINARY, 0.531),
     ("EyelinkLike", Task.THREE_CLASS, 0.341), ("NeonLike", Task.THREE_CLASS, 0.361)],
)
def test_majority_baselines_from_counts(dataset, task, expected):
    assert round(baseline_from_counts(CIT_CLASS_COUNTS[dataset], task.classes), 3) == expected


def test_dummy_baseline_and_empty():
    assert dummy_baseline(["Revealing"] * 3 + ["Concealing"] + ["Faking"] * 10, "binary") == 0.75
    assert dummy_baseline(["Revealing"] * 2 + ["Faking"] * 2, "three_class") == 0.5
    with pytest.raises(EmptyDataset):
        dummy_baseline(["Faking"], "binary")


def test_split_sizes_100():
    counts = {f"P{i:03d}": 18 for i in range(100)}
    folds = split_grouped(counts, 5, seed=1)
    assert [len(f) for f in folds] == [20] * 5
    tv = {p: 18 for f in folds[1:] for p in f}
    chunks = split_grouped(tv, 8, seed=2)
    assert [len(c) for c in chunks] == [10] * 8
    search = {p: 18 for c in chunks[1:] for p in c}
    assert sorted(len(f) for f in split_grouped(search, 5, 3)) == [14] * 5


def test_split_five_and_four_participants():
    folds = split_grouped({f"P{i}": 3 for i in range(5)}, 5)
    assert sorted(len(f) for f in folds) == [1] * 5
    with pytest.raises(TooFewParticipants):
        split_grouped({f"P{i}": 3 for i in range(4)}, 5)


def test_split_balances_trials():
    counts = {"A": 10, "B": 1, "C": 1, "D": 1, "E": 1, "F": 10}
    loads = sorted(sum(counts[p] for p in f) for f in split_grouped(counts, 2, seed=0))
    assert loads == [12, 12]


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 40), st.integers(0, 2**32 - 1))
def test_plan_exclusivity(n, seed):
    frame = toy_frame(n, 1, seed=seed % 1000)
    data = task_data(frame, Task.THREE_CLASS)
    plan = make_split_plan(data, seed)
    everyone = set(data.groups.tolist())
    tests = [set(r.test) for r in plan.replications]
    assert set().union(*tests) == everyone and sum(map(len, tests)) == n
    for r in plan.replications:
        test, hold, search = set(r.test), set(r.holdout), set(r.search)
        assert not (test & hold or test & search or hold & search)
        assert test | hold | search == everyone
        inner = [set(f) for f in r.inner]
        assert set().union(*inner) == search and sum(map(len, inner)) == len(search)


def test_plan_is_seeded():
    data = task_data(toy_frame(12, 2), Task.BINARY)
    assert make_split_plan(data, 4).to_dict() == make_split_plan(data, 4).to_dict()
    assert make_split_plan(data, 4).to_dict() != make_split_plan(data, 5).to_dict()


def test_coverage_resample_logged(caplog):
    # only four participants ever show Concealing; some draws leave a training split without it
    rows = []
    for p in range(10):
        for k in range(2):
            rows.append((f"P{p}", len(rows), "Revealing"))
        if p < 4:
            rows.append((f"P{p}", len(rows), "Concealing"))
    frame = pd.DataFrame(rows, columns=["participant_id", "trial_id", "label"])
    for name in FeatureGroup.ALL.columns:
        frame[name] = 0.0
    data = task_data(frame, Task.BINARY)
    resampled = False
    for seed in range(30):
        with caplog.at_level(logging.WARNING, logger="citeye.harness"):
            caplog.clear()
            plan = make_split_plan(data, seed)
        if plan.resamples:
            resampled = True
            assert "re-drawn" in caplog.text
        for r in plan.replications:
            assert 1 in data.y[data.rows_of(r.search)]
    assert resampled


def test_select_best():
    assert select_best([0.4], [1.0]) == 0
    assert select_best([0.5, 0.7, 0.6], [0.1, 0.9, 0.2]) == 1
    assert select_best([0.7, 0.7, 0.7], [0.5, 0.4, 0.4]) == 1


def test_sample_params_ranges():
    ps = sample_params(300, seed=2)
    assert all(LEARNING_RATE_RANGE[0] <= p.learning_rate <= LEARNING_RATE_RANGE[1] for p in ps)
    assert all(0.5 <= p.subsample <= 1 and 0.5 <= p.colsample_bytree <= 1 for p in ps)
    assert {p.min_child_weight for p in ps} == set(MIN_CHILD_WEIGHTS)
    assert {p.max_depth for p in ps} == set(MAX_DEPTHS)
    assert {p.alpha for p in ps} <= set(REGULARIZATION_GRID) and {p.reg_lambda for p in ps} <= set(REGULARIZATION_GRID)
    assert [p.learning_rate for p in sample_params(5, 2)] == [p.learning_rate for p in ps[:5]]


def test_aggregate_statistics():
    rep = ConditionReport.__new__(ConditionReport)
    from types import SimpleNamespace

    rep.replications = [SimpleNamespace(test_accuracy=a, failed=False) for a in (0.7, 0.7, 0.7, 0.8, 0.8)]
    assert rep.mean_accuracy == pytest.approx(0.74, abs=1e-12)
    rep.replications = [SimpleNamespace(test_accuracy=0.6, failed=False)] * 5
    assert rep.std_accuracy == 0.0


@pytest.fixture(scope="module")
def condition():
    frame = toy_frame(10, 3, seed=1, signal=2.0)
    return run_condition(frame, TaskSpec(Task.BINARY, FeatureGroup.ALL, "NeonLike", seed=2), search_n=3,
                         n_estimators_max=30)


def test_condition_run(condition):
    assert condition.n_final_models == 5 and not condition.failed
    assert condition.baseline == 0.5
    assert all(0 <= a <= 1 for a in condition.accuracies)
    assert all(r.n_rounds <= 30 and len(r.importance.top()) <= 5 for r in condition.replications)
    d = condition.to_dict()
    assert d["n_features"] == 60 and len(d["replications"]) == 5


def test_condition_stage_audit(condition):
    for rep in condition.replications:
        assert audit_stages(rep) == []
        assert len([s for s in rep.stages if s.stage.startswith("inner")]) == 3 * 5


def test_audit_catches_leak(condition):
    from citeye.harness import StageRecord

    rep = condition.replications[0]
    leaked = type(rep)(**{**rep.__dict__, "stages": rep.stages + [StageRecord("inner[x]", rep.split.test[:1], [])]})
    assert audit_stages(leaked)


def test_condition_deterministic(condition):
    frame = toy_frame(10, 3, seed=1, signal=2.0)
    again = run_condition(frame, condition.spec, search_n=3, n_estimators_max=30)
    assert again.to_dict() == condition.to_dict()


def test_single_participant_test_fold():
    frame = toy_frame(5, 3, seed=4)
    rep = run_condition(frame, TaskSpec(Task.THREE_CLASS, FeatureGroup.EYE_MOVEMENT, seed=1), search_n=2,
                        n_estimators_max=10, plan=None)
    assert rep.n_final_models == 5
    assert all(len(r.split.test) == 1 for r in rep.replications)


def test_failed_replication_recorded(monkeypatch):
    import citeye.harness as h

    real = h.run_replication

    def flaky(data, plan, fold, *a, **k):
        if fold == 2:
            raise RuntimeError("boom")
        return real(data, plan, fold, *a, **k)

    monkeypatch.setattr(h, "run_replication", flaky)
    rep = h.run_condition(toy_frame(6, 2), TaskSpec(Task.BINARY, FeatureGroup.EYE_MOVEMENT), search_n=1,
                          n_estimators_max=5)
    assert rep.failed and rep.n_final_models == 4
    assert rep.replications[2].status == "failed" and "boom" in rep.replications[2].error
    assert sum(aggregate_top5([r.importance for r in rep.replications if not r.failed]).counts.values()) <= 20


def test_matrix_sixty_models():
    frames = {"EyelinkLike": toy_frame(5, 2, seed=1), "NeonLike": toy_frame(5, 2, seed=2)}
    reports = run_matrix(frames, search_n=1, n_estimators_max=5)
    assert len(reports) == 12
    assert sum(r.n_final_models for r in reports) == 60
    assert {(r.spec.dataset_id, r.spec.task, r.spec.group) for r in reports} == {
        (d, t, g) for d in frames for t in Task for g in FeatureGroup
    }
    n_feat = {r.spec.group: len(r.spec.group.columns) for r in reports}
    assert n_feat == {FeatureGroup.ALL: 60, FeatureGroup.EYE_MOVEMENT: 7, FeatureGroup.PUPIL: 53}
