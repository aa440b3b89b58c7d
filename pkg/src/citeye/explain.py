"""Shapley attributions for boosted ensembles and importance summaries.

Attributions are path-dependent: a feature left out of a coalition is
marginalised by following both children of its splits, weighted by the
training cover each child received.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._accel import resolve_backend
from ._treeshap import SHAP_KERNELS
from .errors import EmptyTestSet, MissingCoverStats, TooManyFeatures
from .gbdt.model import Ensemble

TOP_K = 5
MIN_OCCURRENCE = 2


@dataclass(eq=False)
class AttributionRow:
    """Contributions (n_outputs, n_features) and base values (n_outputs,).

    For each output, ``base + values.sum()`` equals the model margin.
    """

    values: np.ndarray
    base: np.ndarray

    def total(self) -> np.ndarray:
        return self.base + self.values.sum(axis=-1)


def _require_cover(model: Ensemble) -> None:
    for t in model.trees:
        if t.cover is None:
            raise MissingCoverStats("model was stored without per-node cover statistics")


def expected_values(model: Ensemble) -> np.ndarray:
    """Base value per output: base score plus each tree's cover-weighted mean."""
    _require_cover(model)
    base = model.base_score.astype(float).copy()
    for t in model.trees:
        base[t.class_index] += t.expected_value()
    return base


def shap_values(model: Ensemble, X, backend=None) -> tuple[np.ndarray, np.ndarray]:
    """Attributions for many rows: (n, n_outputs, n_features) and the base vector."""
    _require_cover(model)
    X = model._check(X)
    pk = model.packed
    cover = np.concatenate([t.cover for t in model.trees]) if model.trees else np.zeros(0)
    depth = np.asarray([t.depth() for t in model.trees], dtype=np.int64)
    phi = np.zeros((X.shape[0], model.n_outputs, model.n_features))
    kernel = SHAP_KERNELS[resolve_backend(backend)]
    kernel(
        X,
        pk["feature"],
        pk["threshold"],
        pk["left"],
        pk["right"],
        pk["default_left"],
        pk["value"],
        cover,
        pk["offsets"],
        pk["tree_class"],
        depth,
        model.n_outputs,
        phi,
    )
    return phi, expected_values(model)


def shap_tree(model: Ensemble, x, backend=None) -> AttributionRow:
    phi, base = shap_values(model, np.asarray(x, dtype=float)[None, :], backend)
    return AttributionRow(phi[0], base)


def _conditional_expectation(tree, node: int, x: np.ndarray, known: frozenset) -> float:
    f = tree.feature[node]
    if f < 0:
        return float(tree.value[node])
    l, r = tree.left[node], tree.right[node]
    if f in known:
        v = x[f]
        if np.isnan(v):
            nxt = l if tree.default_left[node] else r
        else:
            nxt = l if v < tree.threshold[node] else r
        return _conditional_expectation(tree, nxt, x, known)
    c = tree.cover[node]
    if c <= 0:
        return 0.0
    return (
        tree.cover[l] * _conditional_expectation(tree, l, x, known)
        + tree.cover[r] * _conditional_expectation(tree, r, x, known)
    ) / c


def shap_exact(model: Ensemble, x, max_features: int = 12) -> AttributionRow:
    """Shapley values by enumerating every coalition of the features the model uses.

    Exponential in the number of used features; meant as a reference for
    ``shap_tree`` on small models.
    """
    _require_cover(model)
    x = np.asarray(x, dtype=float)
    used = sorted({int(f) for t in model.trees for f in t.feature if f >= 0})
    m = len(used)
    if m > max_features:
        raise TooManyFeatures(f"model uses {m} features, exact enumeration capped at {max_features}")
    K = model.n_outputs
    values = np.zeros((K, model.n_features))
    base = model.base_score.astype(float).copy()

    game = {}
    for size in range(m + 1):
        for subset in itertools.combinations(used, size):
            key = frozenset(subset)
            v = base.copy()
            for t in model.trees:
                v[t.class_index] += _conditional_expectation(t, 0, x, key)
            game[key] = v

    weights = [math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)]
    for i in used:
        others = [f for f in used if f != i]
        acc = np.zeros(K)
        for size in range(m):
            for subset in itertools.combinations(others, size):
                key = frozenset(subset)
                acc += weights[size] * (game[key | {i}] - game[key])
        values[:, i] = acc
    return AttributionRow(values, game[frozenset()])


@dataclass
class RankedImportance:
    """Features ranked by mean |attribution|, descending."""

    names: list[str]
    values: list[float]

    def top(self, k: int = TOP_K) -> list[str]:
        """Up to ``k`` leading features with strictly positive importance."""
        return [n for n, v in zip(self.names, self.values) if v > 0][:k]

    def to_dict(self) -> dict:
        return {"features": [{"name": n, "mean_abs_shap": v} for n, v in zip(self.names, self.values)]}


@dataclass
class ImportanceReport:
    per_model_top: list[list[str]]
    counts: dict[str, int]
    rankings: list[RankedImportance] = field(default_factory=list)
    min_occurrence: int = MIN_OCCURRENCE

    def table(self) -> list[tuple[str, int]]:
        """Features occurring at least ``min_occurrence`` times, most frequent first."""
        return [(n, c) for n, c in self.counts.items() if c >= self.min_occurrence]

    def to_dict(self) -> dict:
        return {
            "replications": [
                {"top5": top, "ranking": r.to_dict()["features"]}
                for top, r in itertools.zip_longest(self.per_model_top, self.rankings, fillvalue=RankedImportance([], []))
            ],
            "occurrences": [{"name": n, "count": c} for n, c in self.counts.items()],
            "table": [{"name": n, "count": c} for n, c in self.table()],
            "min_occurrence": self.min_occurrence,
        }


def rank_importance(mean_abs: np.ndarray, names: Sequence[str]) -> RankedImportance:
    mean_abs = np.asarray(mean_abs, dtype=float)
    # stable sort on the negated values keeps canonical order among ties
    order = np.argsort(-mean_abs, kind="stable")
    return RankedImportance([names[i] for i in order], [float(mean_abs[i]) for i in order])


def summarize_importance(model: Ensemble, X_test, names: Sequence[str] | None = None, backend=None) -> RankedImportance:
    """Mean |attribution| over the test rows, summed across outputs for softmax."""
    X_test = np.asarray(X_test, dtype=float)
    if X_test.ndim != 2 or X_test.shape[0] == 0:
        raise EmptyTestSet("importance needs at least one test row")
    if names is None:
        names = model.feature_names or [f"f{i}" for i in range(model.n_features)]
    phi, _ = shap_values(model, X_test, backend)
    mean_abs = np.abs(phi).mean(axis=0).sum(axis=0)
    return rank_importance(mean_abs, list(names))


def aggregate_top5(
    rankings: Sequence[RankedImportance],
    canonical: Sequence[str] | None = None,
    k: int = TOP_K,
    min_occurrence: int = MIN_OCCURRENCE,
) -> ImportanceReport:
    """Count how often each feature lands in a model's top-k nonzero list.

    Counts are ordered by occurrence (descending), ties by ``canonical`` order.
    """
    tops = [r.top(k) for r in rankings]
    raw: dict[str, int] = {}
    for top in tops:
        for name in top:
            raw[name] = raw.get(name, 0) + 1
    if canonical is None:
        canonical = sorted(raw)
    position = {n: i for i, n in enumerate(canonical)}
    ordered = sorted(raw.items(), key=lambda kv: (-kv[1], position.get(kv[0], len(position)), kv[0]))
    return ImportanceReport(tops, dict(ordered), list(rankings), min_occurrence)
