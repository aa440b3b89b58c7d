"""Second-order gradient boosting of regression trees for classification.

Binary problems use the logistic loss with one tree per round; problems with
three or more classes use the softmax loss with one tree per class per round.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .._accel import resolve_backend
from ..errors import EmptyMatrix, MissingCoverStats, SchemaMismatch, SingleClassTrain
from . import _kernels
from .metrics import logloss

FORMAT_NAME = "citeye-gbdt"
FORMAT_VERSION = 1
HESSIAN_FLOOR = 1e-16
PRIOR_FLOOR = 1e-6


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.1
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    min_child_weight: float = 1.0
    max_depth: int = 6  # 0 = unlimited
    alpha: float = 0.0
    reg_lambda: float = 1.0
    n_estimators_max: int = 10000
    early_stopping_rounds: int = 35

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.subsample <= 1.0 or not 0.0 < self.colsample_bytree <= 1.0:
            raise ValueError("subsample and colsample_bytree must lie in (0, 1]")
        if self.min_child_weight < 0 or self.alpha < 0 or self.reg_lambda < 0:
            raise ValueError("min_child_weight, alpha and reg_lambda must be non-negative")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.n_estimators_max < 1 or self.early_stopping_rounds < 1:
            raise ValueError("n_estimators_max and early_stopping_rounds must be >= 1")

    def replace(self, **changes) -> "HyperParams":
        return HyperParams(**{**asdict(self), **changes})


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    cover: np.ndarray | None
    gain: np.ndarray
    class_index: int = 0

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[i] + 1
                d[self.right[i]] = d[i] + 1
        return int(d.max()) if d.size else 0

    def leaf_of(self, x: np.ndarray) -> int:
        """Leaf index reached by one row, following default directions on NaN."""
        node = 0
        while self.feature[node] >= 0:
            v = x[self.feature[node]]
            if np.isnan(v):
                node = self.left[node] if self.default_left[node] else self.right[node]
            else:
                node = self.left[node] if v < self.threshold[node] else self.right[node]
        return int(node)

    def expected_value(self) -> float:
        """Cover-weighted mean output (the tree's prediction with no feature known)."""
        if self.cover is None:
            raise MissingCoverStats("tree carries no cover statistics")
        ev = self.value.astype(float).copy()
        for i in range(self.n_nodes - 1, -1, -1):
            if self.feature[i] >= 0:
                l, r = self.left[i], self.right[i]
                c = self.cover[i]
                ev[i] = (self.cover[l] * ev[l] + self.cover[r] * ev[r]) / c if c > 0 else 0.0
        return float(ev[0])

    def to_dict(self) -> dict:
        leaf = self.feature < 0
        return {
            "class_index": int(self.class_index),
            "feature": self.feature.tolist(),
            "threshold": [None if lf else float(t) for t, lf in zip(self.threshold, leaf)],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "default_left": [bool(v) for v in self.default_left],
            "value": self.value.tolist(),
            "cover": None if self.cover is None else self.cover.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray([0.0 if t is None else t for t in d["threshold"]], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            default_left=np.asarray(d["default_left"], dtype=np.uint8),
            value=np.asarray(d["value"], dtype=float),
            cover=None if d.get("cover") is None else np.asarray(d["cover"], dtype=float),
            gain=np.asarray(d.get("gain") or [0.0] * len(d["feature"]), dtype=float),
            class_index=int(d.get("class_index", 0)),
        )


@dataclass(eq=False)
class Ensemble:
    """A trained model. Trees are stored round-major: round i, class k is
    ``trees[i * n_outputs + k]``."""

    objective: str
    n_classes: int
    n_features: int
    base_score: np.ndarray
    trees: list[Tree] = field(default_factory=list)
    eval_history: list[float] = field(default_factory=list)
    train_history: list[float] = field(default_factory=list)
    best_iteration: int | None = None
    feature_names: tuple[str, ...] | None = None
    params: dict = field(default_factory=dict)

    @property
    def n_outputs(self) -> int:
        return 1 if self.objective == "binary:logistic" else self.n_classes

    @property
    def n_rounds(self) -> int:
        return len(self.trees) // self.n_outputs

    @property
    def best_n_rounds(self) -> int:
        return self.n_rounds if self.best_iteration is None else self.best_iteration + 1

    @cached_property
    def packed(self) -> dict:
        sizes = [t.n_nodes for t in self.trees]
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)

        def cat(name, dtype):
            if not self.trees:
                return np.zeros(0, dtype=dtype)
            return np.concatenate([getattr(t, name) for t in self.trees]).astype(dtype)

        return {
            "feature": cat("feature", np.int64),
            "threshold": cat("threshold", float),
            "left": cat("left", np.int64),
            "right": cat("right", np.int64),
            "default_left": cat("default_left", np.uint8),
            "value": cat("value", float),
            "offsets": offsets,
            "tree_class": np.asarray([t.class_index for t in self.trees], dtype=np.int64),
        }

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaMismatch(f"model expects {self.n_features} features, got array of shape {X.shape}")
        return np.ascontiguousarray(X)

    def predict_margin(self, X, n_rounds: int | None = None, backend=None) -> np.ndarray:
        """Raw scores, shape (n, n_outputs). ``n_rounds`` limits the rounds used."""
        X = self._check(X)
        rounds = self.n_rounds if n_rounds is None else min(n_rounds, self.n_rounds)
        n_trees = rounds * self.n_outputs
        pk = self.packed
        fn = _kernels.KERNELS[resolve_backend(backend)]["predict_packed"]
        out = fn(
            X,
            pk["feature"],
            pk["threshold"],
            pk["left"],
            pk["right"],
            pk["default_left"],
            pk["value"],
            pk["offsets"],
            pk["tree_class"],
            n_trees,
            self.n_outputs,
        )
        return out + self.base_score[None, :]

    def predict_proba(self, X, use_best_iteration: bool = False, backend=None) -> np.ndarray:
        """Class probabilities, shape (n, n_classes)."""
        rounds = self.best_n_rounds if use_best_iteration else None
        return margin_to_proba(self.predict_margin(X, rounds, backend), self.objective)

    def predict(self, X, use_best_iteration: bool = False, backend=None) -> np.ndarray:
        return np.argmax(self.predict_proba(X, use_best_iteration, backend), axis=1)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "objective": self.objective,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "base_score": self.base_score.tolist(),
            "best_iteration": self.best_iteration,
            "eval_history": list(self.eval_history),
            "train_history": list(self.train_history),
            "params": dict(self.params),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} document")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        names = d.get("feature_names")
        return cls(
            objective=d["objective"],
            n_classes=int(d["n_classes"]),
            n_features=int(d["n_features"]),
            base_score=np.asarray(d["base_score"], dtype=float),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            eval_history=list(d.get("eval_history", [])),
            train_history=list(d.get("train_history", [])),
            best_iteration=d.get("best_iteration"),
            feature_names=None if names is None else tuple(names),
            params=dict(d.get("params", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        return cls.from_dict(json.loads(text))


def _sigmoid(m):
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(m):
    z = m - m.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def margin_to_proba(margin: np.ndarray, objective: str) -> np.ndarray:
    if objective == "binary:logistic":
        p = _sigmoid(margin[:, 0])
        return np.column_stack([1.0 - p, p])
    return _softmax(margin)


def _history_loss(margin, y, objective):
    proba = margin_to_proba(margin, objective)
    if objective == "binary:logistic":
        return logloss(proba[:, 1], y)
    return logloss(proba, y)


def presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column stable argsort (NaNs last) and the count of non-NaN entries."""
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    n_valid = (~np.isnan(X)).sum(axis=0).astype(np.int64)
    return order, n_valid


def train(
    X,
    y,
    params: HyperParams = HyperParams(),
    eval_set: tuple | None = None,
    seed: int = 0,
    n_classes: int | None = None,
    feature_names: Sequence[str] | None = None,
    n_rounds: int | None = None,
    backend: str | None = None,
) -> Ensemble:
    """Fit a boosted ensemble.

    Parameters
    ----------
    X, y
        Training matrix (NaN = missing) and integer labels 0..k-1.
    params
        Regularisation, sampling and stopping settings.
    eval_set
        Optional ``(X_eval, y_eval)``. When given, boosting stops once the
        evaluation logloss has not improved for ``early_stopping_rounds``
        rounds and ``best_iteration`` records the best round (0-based).
    n_rounds
        Exact number of rounds to grow, overriding ``n_estimators_max``;
        early stopping is disabled.
    seed
        Seeds the row and column subsampling.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyMatrix(f"training matrix has shape {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y disagree on the number of rows")
    if np.unique(y).size < 2:
        raise SingleClassTrain("training labels contain a single class")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    n_classes = max(n_classes, 2)
    objective = "binary:logistic" if n_classes == 2 else "multi:softmax"
    K = 1 if n_classes == 2 else n_classes

    n, d = X.shape
    prior = np.bincount(y, minlength=n_classes) / n
    prior = np.clip(prior, PRIOR_FLOOR, 1.0 - PRIOR_FLOOR)
    if K == 1:
        base = np.array([np.log(prior[1] / prior[0])])
    else:
        base = np.log(prior)

    kern = _kernels.KERNELS[resolve_backend(backend)]
    build, predict_tree = kern["build"], kern["predict_tree"]
    order, n_valid = presort(X)
    rng = np.random.default_rng(seed)
    lam, alpha, mcw = float(params.reg_lambda), float(params.alpha), float(params.min_child_weight)
    max_depth, lr = int(params.max_depth), float(params.learning_rate)
    n_cols = max(1, int(np.floor(params.colsample_bytree * d)))
    all_feats = np.arange(d, dtype=np.int64)
    all_rows = np.ones(n, dtype=bool)

    margin = np.tile(base, (n, 1))
    onehot = np.zeros((n, K))
    if K == 1:
        onehot[:, 0] = y
    else:
        onehot[np.arange(n), y] = 1.0
    if eval_set is not None:
        Xe = np.ascontiguousarray(np.asarray(eval_set[0], dtype=float))
        ye = np.asarray(eval_set[1], dtype=np.int64)
        margin_e = np.tile(base, (Xe.shape[0], 1))
    early = eval_set is not None and n_rounds is None
    total = params.n_estimators_max if n_rounds is None else int(n_rounds)

    model = Ensemble(
        objective=objective,
        n_classes=n_classes,
        n_features=d,
        base_score=base,
        feature_names=None if feature_names is None else tuple(feature_names),
        params=asdict(params),
    )
    best_loss, best_it = np.inf, None
    for it in range(total):
        if K == 1:
            p = _sigmoid(margin[:, 0])[:, None]
        else:
            p = _softmax(margin)
        grad = p - onehot
        hess = np.maximum(p * (1.0 - p), HESSIAN_FLOOR)
        for k in range(K):
            rows = rng.random(n) < params.subsample if params.subsample < 1.0 else all_rows
            feats = np.sort(rng.choice(d, n_cols, replace=False)).astype(np.int64) if n_cols < d else all_feats
            arrays = build(
                X,
                order,
                n_valid,
                np.ascontiguousarray(grad[:, k]),
                np.ascontiguousarray(hess[:, k]),
                rows,
                feats,
                lam,
                alpha,
                mcw,
                max_depth,
                lr,
            )
            tree = Tree(*arrays, class_index=k)
            model.trees.append(tree)
            margin[:, k] += predict_tree(X, *arrays[:6])
            if eval_set is not None:
                margin_e[:, k] += predict_tree(Xe, *arrays[:6])
        model.train_history.append(_history_loss(margin, y, objective))
        if eval_set is not None:
            loss = _history_loss(margin_e, ye, objective)
            model.eval_history.append(loss)
            if loss < best_loss:
                best_loss, best_it = loss, it
            elif early and it - best_it >= params.early_stopping_rounds:
                break
    if early:
        model.best_iteration = best_it
    return model


def predict_proba(model: Ensemble, x, use_best_iteration: bool = False) -> np.ndarray:
    """Probabilities for one row (1-D result) or a matrix of rows."""
    x = np.asarray(x, dtype=float)
    out = model.predict_proba(x, use_best_iteration)
    return out[0] if x.ndim == 1 else out


def save_model(model: Ensemble, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())


def load_model(path) -> Ensemble:
    with open(path, encoding="utf-8") as fh:
        return Ensemble.from_json(fh.read())
