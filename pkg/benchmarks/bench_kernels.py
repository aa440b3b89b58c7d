"""Time the tree-growing, prediction and attribution kernels on both backends.

    python3 benchmarks/bench_kernels.py [--rows 400] [--rounds 20]

Both backends are called explicitly, so the CITEYE_DISABLE_NUMBA flag does
not matter here. Compilation happens in a warm-up call and is not timed.
"""

import argparse
import time

import numpy as np

from citeye._accel import NUMBA_AVAILABLE
from citeye.explain import shap_values
from citeye.gbdt import HyperParams, train


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=400)
    ap.add_argument("--features", type=int, default=60)
    ap.add_argument("--rounds", type=int, default=20)
    ap.add_argument("--shap-rows", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.rows, args.features))
    X[rng.random(X.shape) < 0.05] = np.nan
    y = (np.nan_to_num(X[:, 0]) + 0.5 * np.nan_to_num(X[:, 1]) + rng.normal(0, 0.5, args.rows) > 0).astype(int)
    params = HyperParams(learning_rate=0.1, max_depth=6, subsample=0.8, colsample_bytree=0.8)
    backends = ["numpy"] + (["numba"] if NUMBA_AVAILABLE else [])

    models = {}
    rows = []
    for b in backends:
        train(X, y, params, n_rounds=1, backend=b)  # warm-up / compile
        models[b] = train(X, y, params, n_rounds=args.rounds, backend=b)
        t_train = _time(lambda: train(X, y, params, n_rounds=args.rounds, backend=b), args.repeat)
        t_pred = _time(lambda: models[b].predict_margin(X, backend=b), args.repeat)
        shap_values(models[b], X[:1], backend=b)
        t_shap = _time(lambda: shap_values(models[b], X[: args.shap_rows], backend=b), 1)
        rows.append((b, t_train, t_pred, t_shap))

    same = all(
        np.array_equal(a.value, c.value) and np.array_equal(a.feature, c.feature)
        for a, c in zip(models["numpy"].trees, models[backends[-1]].trees)
    )
    print(f"{args.rows} rows x {args.features} features, {args.rounds} rounds; trees identical across backends: {same}")
    print(f"{'backend':<8} {'train (s)':>10} {'predict (s)':>12} {'shap/' + str(args.shap_rows) + ' rows (s)':>18}")
    for b, tt, tp, ts in rows:
        print(f"{b:<8} {tt:>10.4f} {tp:>12.5f} {ts:>18.4f}")
    if len(rows) == 2:
        print(f"speed-up  {rows[0][1] / rows[1][1]:>9.1f}x {rows[0][2] / rows[1][2]:>11.1f}x {rows[0][3] / rows[1][3]:>17.1f}x")


if __name__ == "__main__":
    main()
