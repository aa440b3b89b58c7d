"""Participant-grouped nested evaluation.

One condition = one (task, feature group, dataset). Participants are split into
5 outer folds; each fold in turn is the test set of a replication. Inside the
remaining 80 %, one eighth of the participants (10 % overall) is held out to
pick the number of boosting rounds, and the rest (70 %) is split into 5 inner
folds for the random hyperparameter search. The final model is retrained on
the whole 80 % with the chosen round count and scored on the test fold.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import EmptyDataset, TooFewParticipants
from .explain import ImportanceReport, RankedImportance, aggregate_top5, summarize_importance
from .features import FeatureGroup
from .gbdt import HyperParams, accuracy, logloss, train
from .ingest import Label

log = logging.getLogger(__name__)

OUTER_FOLDS = 5
INNER_FOLDS = 5
HOLDOUT_SHARE = 8  # holdout = 1/8 of the 80 % block = 10 % overall
MAX_RESAMPLES = 100

LEARNING_RATE_RANGE = (0.001, 0.191)
SUBSAMPLE_RANGE = (0.5, 1.0)
COLSAMPLE_RANGE = (0.5, 1.0)
MIN_CHILD_WEIGHTS = (1, 3, 5, 7)
MAX_DEPTHS = (0,) + tuple(range(3, 16))
REGULARIZATION_GRID = (0.0, 0.01, 1.0, 2.0, 5.0, 7.0, 10.0, 50.0, 100.0)

# class counts of the two recorded CIT datasets (87 Eyelink, 36 Neon participants)
CIT_CLASS_COUNTS = {
    "EyelinkLike": {"Concealing": 1996, "Faking": 2065, "Revealing": 1996},
    "NeonLike": {"Concealing": 160, "Faking": 161, "Revealing": 181},
}


class Task(str, enum.Enum):
    BINARY = "binary"
    THREE_CLASS = "three_class"

    @property
    def classes(self) -> tuple[str, ...]:
        if self is Task.BINARY:
            return (Label.REVEALING.value, Label.CONCEALING.value)
        return (Label.REVEALING.value, Label.CONCEALING.value, Label.FAKING.value)

    @classmethod
    def parse(cls, value) -> "Task":
        if isinstance(value, cls):
            return value
        aliases = {"revealvsconceal": "binary", "revealvsconcealvsfake": "three_class", "3class": "three_class"}
        key = str(value).strip().lower().replace("-", "_")
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class TaskSpec:
    task: Task = Task.BINARY
    group: FeatureGroup = FeatureGroup.ALL
    dataset_id: str = "NeonLike"
    seed: int = 0


@dataclass
class TaskData:
    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray
    feature_names: tuple[str, ...]
    classes: tuple[str, ...]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def rows_of(self, participants) -> np.ndarray:
        return np.flatnonzero(np.isin(self.groups, list(participants)))


def task_data(frame: pd.DataFrame, task=Task.BINARY, group=FeatureGroup.ALL) -> TaskData:
    """Restrict a feature table to a task's classes and a feature group."""
    task = Task.parse(task)
    group = FeatureGroup.parse(group)
    keep = frame["label"].isin(task.classes).to_numpy()
    sub = frame.loc[keep]
    code = {c: i for i, c in enumerate(task.classes)}
    return TaskData(
        X=np.ascontiguousarray(sub[list(group.columns)].to_numpy(dtype=float)),
        y=sub["label"].map(code).to_numpy(dtype=np.int64),
        groups=sub["participant_id"].astype(str).to_numpy(dtype=object),
        feature_names=tuple(group.columns),
        classes=task.classes,
    )


def baseline_from_counts(counts: Mapping[str, int], classes: Sequence[str] | None = None) -> float:
    """Majority-class share among ``classes`` (all classes if None)."""
    if classes is not None:
        counts = {c: counts.get(c, 0) for c in classes}
    total = sum(counts.values())
    if total == 0:
        raise EmptyDataset("no labelled rows")
    return max(counts.values()) / total


def dummy_baseline(labels: Sequence[str], task=Task.BINARY) -> float:
    """Accuracy of always predicting the majority class of the whole dataset."""
    task = Task.parse(task)
    counts = pd.Series(list(labels), dtype=object).value_counts().to_dict()
    return baseline_from_counts(counts, task.classes)


def _derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def split_grouped(trial_counts: Mapping[str, int], k: int = OUTER_FOLDS, seed: int = 0) -> list[list[str]]:
    """Assign whole participants to ``k`` folds.

    Participants are shuffled with ``seed`` and each goes to the fold holding
    the fewest trials so far (then fewest participants, then lowest index).
    """
    pids = sorted(trial_counts)
    if len(pids) < k:
        raise TooFewParticipants(f"{len(pids)} participants cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = [pids[i] for i in rng.permutation(len(pids))]
    folds: list[list[str]] = [[] for _ in range(k)]
    load = [0] * k
    for pid in order:
        j = min(range(k), key=lambda f: (load[f], len(folds[f]), f))
        folds[j].append(pid)
        load[j] += int(trial_counts[pid])
    return [sorted(f) for f in folds]


@dataclass
class ReplicationSplit:
    fold: int
    test: list[str]
    holdout: list[str]
    search: list[str]
    inner: list[list[str]]

    @property
    def trainval(self) -> list[str]:
        return sorted(self.holdout + self.search)

    def inner_pairs(self) -> list[tuple[list[str], list[str]]]:
        out = []
        for j, val in enumerate(self.inner):
            train_ids = sorted(p for i, f in enumerate(self.inner) if i != j for p in f)
            out.append((train_ids, val))
        return out

    def to_dict(self) -> dict:
        return {"fold": self.fold, "test": self.test, "holdout": self.holdout, "inner": self.inner}


@dataclass
class SplitPlan:
    seed: int
    outer: list[list[str]]
    replications: list[ReplicationSplit]
    resamples: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "resamples": self.resamples,
            "replications": [r.to_dict() for r in self.replications],
        }


def _counts(groups: np.ndarray, pids=None) -> dict[str, int]:
    vc = pd.Series(groups, dtype=object).value_counts()
    if pids is not None:
        vc = vc.loc[list(pids)]
    return {str(k): int(v) for k, v in vc.items()}


def _plan_once(data: TaskData, seed: int, k: int, inner_k: int) -> SplitPlan:
    counts = _counts(data.groups)
    outer = split_grouped(counts, k, seed)
    reps = []
    for f, test in enumerate(outer):
        trainval = sorted(p for i, fold in enumerate(outer) if i != f for p in fold)
        tv_counts = {p: counts[p] for p in trainval}
        # small cohorts cannot fill 8 chunks or k inner folds; shrink to one participant per part
        chunks = split_grouped(tv_counts, min(HOLDOUT_SHARE, len(trainval) - 1), _derive_seed(seed, f, 1))
        holdout = chunks[0]
        search = sorted(p for c in chunks[1:] for p in c)
        inner = split_grouped({p: counts[p] for p in search}, min(inner_k, len(search)), _derive_seed(seed, f, 2))
        reps.append(ReplicationSplit(f, test, holdout, search, inner))
    return SplitPlan(seed, outer, reps)


def _covers_classes(data: TaskData, pids) -> bool:
    rows = data.rows_of(pids)
    return np.unique(data.y[rows]).size == data.n_classes


def make_split_plan(data: TaskData, seed: int = 0, k: int = OUTER_FOLDS, inner_k: int = INNER_FOLDS) -> SplitPlan:
    """Outer folds, holdouts and inner folds, with every training split
    containing all task classes (re-drawn with a bumped seed otherwise)."""
    n_participants = len(set(data.groups.tolist()))
    if n_participants < k:
        raise TooFewParticipants(f"{n_participants} participants cannot fill {k} folds")
    for attempt in range(MAX_RESAMPLES):
        plan_seed = seed if attempt == 0 else _derive_seed(seed, 10_000 + attempt)
        plan = _plan_once(data, plan_seed, k, inner_k)
        ok = all(
            _covers_classes(data, r.trainval)
            and _covers_classes(data, r.search)
            and all(_covers_classes(data, tr) for tr, _ in r.inner_pairs())
            for r in plan.replications
        )
        if ok:
            plan.seed = seed
            plan.resamples = attempt
            if attempt:
                log.warning("split plan re-drawn %d time(s) to keep every class in every training split", attempt)
            return plan
    raise TooFewParticipants("could not find folds where every training split holds all classes")


def sample_params(n: int, seed: int = 0, n_estimators_max: int = 10000, early_stopping_rounds: int = 35) -> list[HyperParams]:
    """Draw ``n`` hyperparameter sets: uniform on the continuous ranges, uniform
    over the listed values for the discrete ones."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        out.append(
            HyperParams(
                learning_rate=float(rng.uniform(*LEARNING_RATE_RANGE)),
                subsample=float(rng.uniform(*SUBSAMPLE_RANGE)),
                colsample_bytree=float(rng.uniform(*COLSAMPLE_RANGE)),
                min_child_weight=float(rng.choice(MIN_CHILD_WEIGHTS)),
                max_depth=int(rng.choice(MAX_DEPTHS)),
                alpha=float(rng.choice(REGULARIZATION_GRID)),
                reg_lambda=float(rng.choice(REGULARIZATION_GRID)),
                n_estimators_max=n_estimators_max,
                early_stopping_rounds=early_stopping_rounds,
            )
        )
    return out


@dataclass
class StageRecord:
    """Participants on each side of one trained model, kept for leakage audits."""

    stage: str
    train: list[str]
    evaluate: list[str]


@dataclass
class SearchResult:
    candidates: list[HyperParams]
    mean_accuracy: list[float]
    mean_logloss: list[float]
    best_index: int
    stages: list[StageRecord] = field(default_factory=list)

    @property
    def best(self) -> HyperParams:
        return self.candidates[self.best_index]


def select_best(mean_accuracy: Sequence[float], mean_logloss: Sequence[float]) -> int:
    """Index of the highest accuracy; ties to lower logloss, then to the earlier index."""
    return min(range(len(mean_accuracy)), key=lambda i: (-mean_accuracy[i], mean_logloss[i], i))


def _fit_inner(data: TaskData, params: HyperParams, train_ids, val_ids, seed: int, backend=None):
    tr, va = data.rows_of(train_ids), data.rows_of(val_ids)
    model = train(
        data.X[tr], data.y[tr], params, eval_set=(data.X[va], data.y[va]), seed=seed,
        n_classes=data.n_classes, backend=backend,
    )
    proba = model.predict_proba(data.X[va], use_best_iteration=True)
    ll = logloss(proba[:, 1] if data.n_classes == 2 else proba, data.y[va])
    return accuracy(proba, data.y[va]), ll


def random_search(
    data: TaskData,
    split: ReplicationSplit,
    n: int = 100,
    seed: int = 0,
    n_jobs: int = 1,
    n_estimators_max: int = 10000,
    backend=None,
) -> SearchResult:
    """Score ``n`` sampled sets by mean inner-fold validation accuracy.

    Ties go to the lower mean validation logloss, then to the earlier sample.
    Each fold early-stops on its own validation split; those round counts are
    not carried forward.
    """
    candidates = sample_params(n, _derive_seed(seed, split.fold, 3), n_estimators_max)
    pairs = split.inner_pairs()
    items = [(i, j) for i in range(n) for j in range(len(pairs))]

    def work(i, j):
        tr, va = pairs[j]
        return _fit_inner(data, candidates[i], tr, va, _derive_seed(seed, split.fold, 4, i, j), backend)

    if n_jobs == 1:
        results = [work(i, j) for i, j in items]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(work)(i, j) for i, j in items)
    acc = np.zeros((n, len(pairs)))
    ll = np.zeros((n, len(pairs)))
    for (i, j), (a, l) in zip(items, results):
        acc[i, j], ll[i, j] = a, l
    mean_acc = acc.mean(axis=1)
    mean_ll = ll.mean(axis=1)
    best = select_best(mean_acc, mean_ll)
    stages = [StageRecord(f"inner[{i}][{j}]", pairs[j][0], pairs[j][1]) for i, j in items]
    return SearchResult(candidates, mean_acc.tolist(), mean_ll.tolist(), best, stages)


@dataclass
class ReplicationReport:
    fold: int
    test_accuracy: float | None
    params: dict | None
    n_rounds: int | None
    n_trees: int | None
    importance: RankedImportance | None
    split: ReplicationSplit
    search_best_accuracy: float | None = None
    stages: list[StageRecord] = field(default_factory=list)
    status: str = "ok"
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "status": self.status,
            "error": self.error,
            "test_accuracy": self.test_accuracy,
            "params": self.params,
            "n_rounds": self.n_rounds,
            "n_trees": self.n_trees,
            "search_best_mean_accuracy": self.search_best_accuracy,
            "top5": None if self.importance is None else self.importance.top(),
            "split": self.split.to_dict(),
        }


def run_replication(
    data: TaskData,
    plan: SplitPlan,
    fold: int,
    search_n: int = 100,
    seed: int = 0,
    n_jobs: int = 1,
    n_estimators_max: int = 10000,
    backend=None,
) -> ReplicationReport:
    split = plan.replications[fold]
    search = random_search(data, split, search_n, seed, n_jobs, n_estimators_max, backend)
    params = search.best

    block, hold = data.rows_of(split.search), data.rows_of(split.holdout)
    stopper = train(
        data.X[block], data.y[block], params, eval_set=(data.X[hold], data.y[hold]),
        seed=_derive_seed(seed, fold, 5), n_classes=data.n_classes, backend=backend,
    )
    n_rounds = stopper.best_n_rounds

    tv, test = data.rows_of(split.trainval), data.rows_of(split.test)
    final = train(
        data.X[tv], data.y[tv], params, seed=_derive_seed(seed, fold, 6), n_classes=data.n_classes,
        feature_names=data.feature_names, n_rounds=n_rounds, backend=backend,
    )
    acc = accuracy(final.predict(data.X[test]), data.y[test])
    ranking = summarize_importance(final, data.X[test], data.feature_names, backend=backend)
    stages = search.stages + [
        StageRecord("early_stop", list(split.search), list(split.holdout)),
        StageRecord("final", split.trainval, list(split.test)),
    ]
    return ReplicationReport(
        fold=fold,
        test_accuracy=acc,
        params=asdict(params),
        n_rounds=n_rounds,
        n_trees=len(final.trees),
        importance=ranking,
        split=split,
        search_best_accuracy=search.mean_accuracy[search.best_index],
        stages=stages,
    )


def audit_stages(rep: ReplicationReport) -> list[str]:
    """Participant-exclusivity violations across the stages of one replication.

    Every stage must keep its train and evaluation participants apart, test
    participants may only be seen by the final evaluation, and holdout
    participants may not enter the search.
    """
    out = []
    test, holdout = set(rep.split.test), set(rep.split.holdout)
    for st in rep.stages:
        tr, ev = set(st.train), set(st.evaluate)
        if tr & ev:
            out.append(f"{st.stage}: {sorted(tr & ev)} on both sides")
        if st.stage != "final" and (tr | ev) & test:
            out.append(f"{st.stage}: test participants {sorted((tr | ev) & test)} used")
        if st.stage.startswith("inner") and (tr | ev) & holdout:
            out.append(f"{st.stage}: holdout participants {sorted((tr | ev) & holdout)} used")
    return out


@dataclass
class ConditionReport:
    spec: TaskSpec
    baseline: float
    replications: list[ReplicationReport]
    importance: ImportanceReport
    n_rows: int
    n_participants: int
    plan: SplitPlan

    @property
    def accuracies(self) -> list[float]:
        return [r.test_accuracy for r in self.replications if not r.failed]

    @property
    def mean_accuracy(self) -> float:
        a = self.accuracies
        return float(np.mean(a)) if a else math.nan

    @property
    def std_accuracy(self) -> float:
        a = self.accuracies
        return float(np.std(a, ddof=0)) if a else math.nan

    @property
    def n_final_models(self) -> int:
        return len(self.accuracies)

    @property
    def failed(self) -> bool:
        return any(r.failed for r in self.replications)

    def to_dict(self) -> dict:
        return {
            "task": self.spec.task.value,
            "feature_group": self.spec.group.value,
            "n_features": len(self.spec.group.columns),
            "dataset": self.spec.dataset_id,
            "seed": self.spec.seed,
            "n_rows": self.n_rows,
            "n_participants": self.n_participants,
            "baseline": self.baseline,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "n_final_models": self.n_final_models,
            "failed": self.failed,
            "replications": [r.to_dict() for r in self.replications],
            "importance_table": [{"name": n, "count": c} for n, c in self.importance.table()],
        }


def run_condition(
    frame: pd.DataFrame,
    spec: TaskSpec,
    search_n: int = 100,
    n_jobs: int = 1,
    n_estimators_max: int = 10000,
    backend=None,
    plan: SplitPlan | None = None,
) -> ConditionReport:
    """All five replications of one condition plus the aggregated importance table.

    A replication that raises is recorded with ``status="failed"`` and the
    remaining replications still run.
    """
    data = task_data(frame, spec.task, spec.group)
    if data.X.shape[0] == 0:
        raise EmptyDataset("no rows for this task")
    baseline = dummy_baseline(frame["label"], spec.task)
    plan = plan or make_split_plan(data, spec.seed)
    reps = []
    for fold in range(len(plan.replications)):
        try:
            reps.append(run_replication(data, plan, fold, search_n, spec.seed, n_jobs, n_estimators_max, backend))
        except Exception as exc:  # noqa: BLE001 - reported per replication
            log.error("replication %d failed: %s", fold, exc)
            reps.append(
                ReplicationReport(fold, None, None, None, None, None, plan.replications[fold],
                                  status="failed", error=f"{type(exc).__name__}: {exc}")
            )
    rankings = [r.importance for r in reps if not r.failed]
    importance = aggregate_top5(rankings, data.feature_names)
    return ConditionReport(
        spec=spec,
        baseline=baseline,
        replications=reps,
        importance=importance,
        n_rows=int(data.X.shape[0]),
        n_participants=len(set(data.groups.tolist())),
        plan=plan,
    )


def run_matrix(
    frames: Mapping[str, pd.DataFrame],
    search_n: int = 100,
    seed: int = 0,
    n_jobs: int = 1,
    n_estimators_max: int = 10000,
    backend=None,
) -> list[ConditionReport]:
    """Every task x feature group for each dataset (2 x 3 x n_datasets conditions)."""
    out = []
    for dataset_id, frame in frames.items():
        for task in Task:
            for group in FeatureGroup:
                spec = TaskSpec(task, group, dataset_id, seed)
                out.append(run_condition(frame, spec, search_n, n_jobs, n_estimators_max, backend))
    return out
