"""Built-in oracle checks.

Each check pits a production routine against an independent reference
(exhaustive enumeration, brute-force predicates, plain arithmetic) and
returns a :class:`CheckResult`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ._accel import resolve_backend
from .events import EventThresholds, filter_events
from .explain import shap_exact, shap_values
from .gbdt import HyperParams, train
from .gbdt._kernels import KERNELS
from .gbdt.model import Ensemble, HESSIAN_FLOOR, presort
from .harness import CIT_CLASS_COUNTS, Task, baseline_from_counts
from .ingest import EventKind, OcularEvent

GOLDEN_MODEL = "golden_model.json"
EXPECTED_BASELINES = {
    ("EyelinkLike", Task.BINARY): 0.500,
    ("NeonLike", Task.BINARY): 0.531,
    ("EyelinkLike", Task.THREE_CLASS): 0.341,
    ("NeonLike", Task.THREE_CLASS): 0.361,
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


# ---------------------------------------------------------------- split finder


def _soft(G, alpha):
    return math.copysign(max(abs(G) - alpha, 0.0), G)


def _score(G, H, lam, alpha):
    d = H + lam
    return _soft(G, alpha) ** 2 / d if d > 0 else 0.0


def best_split_bruteforce(X, g, h, lam=1.0, alpha=0.0, mcw=0.0):
    """Exhaustive search for the root split.

    Every feature, every midpoint between consecutive distinct observed values,
    and both routes for missing values are scored independently. Returns
    ``(gain, feature, threshold, default_left)``; gain 0 and feature -1 when no
    split clears ``mcw``.
    """
    G, H = float(np.sum(g)), float(np.sum(h))
    parent = _score(G, H, lam, alpha)
    best = (0.0, -1, 0.0, 0)
    for f in range(X.shape[1]):
        col = X[:, f]
        miss = np.isnan(col)
        vals = np.unique(col[~miss])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            if not thr > a:
                thr = b
            lo = ~miss & (col < thr)
            for dl in (1, 0):
                mask = lo | miss if dl else lo
                gl, hl = float(g[mask].sum()), float(h[mask].sum())
                gr, hr = G - gl, H - hl
                if hl < mcw or hr < mcw:
                    continue
                gain = 0.5 * (_score(gl, hl, lam, alpha) + _score(gr, hr, lam, alpha) - parent)
                if gain > best[0]:
                    best = (gain, f, thr, dl)
    return best


def split_gain(X, g, h, f, thr, dl, lam=1.0, alpha=0.0):
    """Gain of one given split, computed from scratch."""
    col = X[:, f]
    miss = np.isnan(col)
    mask = (~miss & (col < thr)) | (miss & bool(dl))
    G, H = float(np.sum(g)), float(np.sum(h))
    gl, hl = float(g[mask].sum()), float(h[mask].sum())
    return 0.5 * (_score(gl, hl, lam, alpha) + _score(G - gl, H - hl, lam, alpha) - _score(G, H, lam, alpha))


def _random_split_case(rng):
    n = int(rng.integers(2, 65))
    d = int(rng.integers(1, 5))
    X = rng.normal(size=(n, d))
    if rng.random() < 0.5:
        X = np.round(X * 2) / 2  # ties
    X[rng.random((n, d)) < rng.uniform(0, 0.3)] = np.nan
    p = rng.uniform(0.05, 0.95, n)
    y = rng.integers(0, 2, n)
    g, h = p - y, np.maximum(p * (1 - p), HESSIAN_FLOOR)
    lam = float(rng.choice([0.0, 0.01, 1.0, 5.0]))
    alpha = float(rng.choice([0.0, 0.0, 0.5, 2.0]))
    mcw = float(rng.choice([0.0, 0.1, 0.5, 1.0]))
    return X, g, h, lam, alpha, mcw


def check_split_finder(n_cases: int = 500, seed: int = 0, backend: str | None = None, tol: float = 1e-9) -> CheckResult:
    """Root split of the tree kernel vs exhaustive enumeration."""
    build = KERNELS[resolve_backend(backend)]["build"]
    rng = np.random.default_rng(seed)
    bad = []
    for c in range(n_cases):
        X, g, h, lam, alpha, mcw = _random_split_case(rng)
        order, n_valid = presort(X)
        tree = build(X, order, n_valid, g, h, np.ones(X.shape[0], bool), np.arange(X.shape[1], dtype=np.int64),
                     lam, alpha, mcw, 1, 1.0)
        feat, thr, dl, gain = int(tree[0][0]), float(tree[1][0]), int(tree[4][0]), float(tree[7][0])
        ref_gain, ref_feat, ref_thr, ref_dl = best_split_bruteforce(X, g, h, lam, alpha, mcw)
        if ref_feat < 0 or feat < 0:
            ok = feat == ref_feat
        elif (feat, thr, dl) == (ref_feat, ref_thr, ref_dl):
            ok = abs(gain - ref_gain) <= tol
        else:
            # a different split is only acceptable if it ties the optimum
            ok = abs(gain - ref_gain) <= tol and abs(split_gain(X, g, h, feat, thr, dl, lam, alpha) - ref_gain) <= tol
        if not ok:
            bad.append(c)
    return CheckResult("split_finder", not bad, f"{n_cases - len(bad)}/{n_cases} cases match" + (f" (first bad {bad[0]})" if bad else ""))


# ---------------------------------------------------------------- shapley


def _random_small_model(rng, n_classes=None):
    d = int(rng.integers(1, 5))
    n = int(rng.integers(20, 80))
    X = rng.normal(size=(n, d))
    X[rng.random((n, d)) < 0.1] = np.nan
    k = n_classes or int(rng.choice([2, 3]))
    y = rng.integers(0, k, n)
    y[:k] = np.arange(k)
    params = HyperParams(
        learning_rate=float(rng.uniform(0.1, 1.0)),
        max_depth=int(rng.integers(1, 4)),
        reg_lambda=float(rng.choice([0.0, 1.0, 5.0])),
        alpha=float(rng.choice([0.0, 0.5])),
        min_child_weight=0.0,
        subsample=float(rng.choice([1.0, 0.8])),
    )
    model = train(X, y, params, n_rounds=int(rng.integers(1, 4)), n_classes=k, seed=int(rng.integers(1 << 30)))
    return model, X


def check_shapley(n_pairs: int = 100, seed: int = 0, backend: str | None = None, tol: float = 1e-9) -> CheckResult:
    """Tree-Shapley values vs coalition enumeration on small models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        model, X = _random_small_model(rng)
        row = X[int(rng.integers(X.shape[0]))]
        if rng.random() < 0.3:
            row = row.copy()
            row[int(rng.integers(row.size))] = np.nan
        phi, base = shap_values(model, row[None, :], backend)
        ref = shap_exact(model, row)
        worst = max(worst, float(np.max(np.abs(phi[0] - ref.values))), float(np.max(np.abs(base - ref.base))))
    return CheckResult("shapley_bruteforce", worst <= tol, f"max |diff| {worst:.2e} over {n_pairs} pairs")


def check_local_accuracy(n_rows: int = 1000, seed: int = 0, backend: str | None = None, tol: float = 1e-6) -> CheckResult:
    """Attributions plus base reproduce the margin on larger models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in (2, 3):
        X = rng.normal(size=(n_rows, 12))
        X[rng.random(X.shape) < 0.05] = np.nan
        y = (np.nan_to_num(X[:, 0]) + np.nan_to_num(X[:, 1] * X[:, 2]) > 0).astype(int)
        if k == 3:
            y = y + (np.nan_to_num(X[:, 3]) > 1)
        params = HyperParams(learning_rate=0.3, max_depth=6, subsample=0.8, colsample_bytree=0.8)
        model = train(X, y, params, n_rounds=30, n_classes=k, seed=seed)
        phi, base = shap_values(model, X, backend)
        worst = max(worst, float(np.max(np.abs(phi.sum(axis=2) + base - model.predict_margin(X)))))
    return CheckResult("shapley_local_accuracy", worst <= tol, f"max |margin diff| {worst:.2e} over {n_rows} rows x 2 models")


# ---------------------------------------------------------------- event filter


def _random_events(rng, n):
    out = []
    kinds = list(EventKind)
    for _ in range(n):
        kind = kinds[int(rng.integers(3))]
        start = float(rng.uniform(0, 5000))
        # mix of boundary values and arbitrary durations
        dur = float(rng.choice([rng.uniform(0.5, 6000), rng.choice([15, 60, 400, 700, 5000, 14.999, 5000.001])]))
        amp = float(rng.uniform(0, 20)) if kind is EventKind.SACCADE else None
        out.append(OcularEvent(kind, start, start + dur, amp))
    return out


def check_filter(n_sets: int = 1000, seed: int = 0, th: EventThresholds = EventThresholds()) -> CheckResult:
    """filter_events vs an inline predicate, plus idempotence."""
    bands = {
        EventKind.FIXATION: (th.fixation_min_ms, th.fixation_max_ms),
        EventKind.SACCADE: (th.saccade_min_ms, th.saccade_max_ms),
        EventKind.BLINK: (th.blink_min_ms, th.blink_max_ms),
    }
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_sets):
        events = _random_events(rng, int(rng.integers(0, 30)))
        expected = [e for e in events if bands[e.kind][0] <= (e.end_ms - e.start_ms) <= bands[e.kind][1]]
        got = filter_events(events, th)
        if got != expected or filter_events(got, th) != got:
            bad += 1
    return CheckResult("event_filter", bad == 0, f"{n_sets - bad}/{n_sets} sets match")


# ---------------------------------------------------------------- baselines


def check_baselines() -> CheckResult:
    """Majority-class shares of the recorded class counts, rounded to 3 decimals."""
    wrong = []
    parts = []
    for (dataset, task), expected in EXPECTED_BASELINES.items():
        got = round(baseline_from_counts(CIT_CLASS_COUNTS[dataset], task.classes), 3)
        parts.append(f"{dataset}/{task.value}={got:.3f}")
        if got != expected:
            wrong.append(parts[-1])
    return CheckResult("baseline_arithmetic", not wrong, " ".join(parts))


# ---------------------------------------------------------------- golden model


def golden_path() -> Path:
    return Path(str(resources.files("citeye") / "data" / GOLDEN_MODEL))


def make_golden(seed: int = 7) -> dict:
    """Small training set plus the model trained on it (no subsampling)."""
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(40, 3)), 3)
    X[rng.random(X.shape) < 0.1] = np.nan
    y = (np.nan_to_num(X[:, 0]) - np.nan_to_num(X[:, 2]) > 0).astype(int)
    params = HyperParams(learning_rate=0.5, max_depth=3, reg_lambda=2.0, alpha=0.1, min_child_weight=0.5)
    model = train(X, y, params, n_rounds=5)
    return {
        "X": [[None if np.isnan(v) else float(v) for v in row] for row in X],
        "y": y.tolist(),
        "model": model.to_dict(),
    }


def expected_leaf_values(model: Ensemble, X: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Recompute every leaf weight from the training rows reaching it.

    Gradients are refreshed after each round from the stored trees, so each
    tree is checked against the margins it was actually fit to. Uses the
    stored ``reg_lambda``, ``alpha`` and ``learning_rate``.
    """
    p = model.params
    lam, alpha, lr = float(p["reg_lambda"]), float(p["alpha"]), float(p["learning_rate"])
    K = model.n_outputs
    n = X.shape[0]
    margin = np.tile(model.base_score, (n, 1)).astype(float)
    onehot = np.zeros((n, K))
    if K == 1:
        onehot[:, 0] = y
    else:
        onehot[np.arange(n), y] = 1.0
    out = []
    for r in range(model.n_rounds):
        if K == 1:
            prob = (1.0 / (1.0 + np.exp(-margin)))
        else:
            e = np.exp(margin - margin.max(axis=1, keepdims=True))
            prob = e / e.sum(axis=1, keepdims=True)
        g = prob - onehot
        h = np.maximum(prob * (1 - prob), HESSIAN_FLOOR)
        for k in range(K):
            tree = model.trees[r * K + k]
            leaves = np.array([tree.leaf_of(x) for x in X])
            vals = np.zeros(tree.n_nodes)
            for leaf in np.unique(leaves):
                m = leaves == leaf
                G, H = float(g[m, k].sum()), float(h[m, k].sum())
                vals[leaf] = lr * (-_soft(G, alpha) / (H + lam)) if H + lam > 0 else 0.0
            out.append(vals)
            margin[:, k] += vals[leaves]
    return out


def check_golden(path=None, tol: float = 1e-9) -> CheckResult:
    """Stored leaf weights equal the closed-form weights implied by the stored
    data and regularisation."""
    path = Path(path) if path is not None else golden_path()
    doc = json.loads(path.read_text())
    X = np.array([[np.nan if v is None else v for v in row] for row in doc["X"]], dtype=float)
    y = np.asarray(doc["y"], dtype=np.int64)
    model = Ensemble.from_dict(doc["model"])
    expected = expected_leaf_values(model, X, y)
    worst = 0.0
    for tree, vals in zip(model.trees, expected):
        leaf = tree.feature < 0
        worst = max(worst, float(np.max(np.abs(tree.value[leaf] - vals[leaf]))))
    return CheckResult("golden_leaf_weights", worst <= tol, f"max |leaf diff| {worst:.2e}")


def run_all(seed: int = 0, backend: str | None = None, golden=None) -> list[CheckResult]:
    return [
        check_split_finder(seed=seed, backend=backend),
        check_shapley(seed=seed, backend=backend),
        check_local_accuracy(seed=seed, backend=backend),
        check_filter(seed=seed),
        check_baselines(),
        check_golden(golden),
    ]
