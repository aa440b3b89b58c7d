"""Path-dependent tree-Shapley recursion (polynomial time, exact).

The same functions run compiled (numba) or as plain Python. The Python form is
the fallback; it is slow but needs only numpy.
"""

import numpy as np

from ._accel import njit


def _extend_path(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, zero_fraction, one_fraction, feature_index):
    feature_indexes[unique_depth] = feature_index
    zero_fractions[unique_depth] = zero_fraction
    one_fractions[unique_depth] = one_fraction
    pweights[unique_depth] = 1.0 if unique_depth == 0 else 0.0
    for i in range(unique_depth - 1, -1, -1):
        pweights[i + 1] += one_fraction * pweights[i] * (i + 1.0) / (unique_depth + 1.0)
        pweights[i] = zero_fraction * pweights[i] * (unique_depth - i) / (unique_depth + 1.0)


def _unwind_path(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, path_index):
    one_fraction = one_fractions[path_index]
    zero_fraction = zero_fractions[path_index]
    next_one_portion = pweights[unique_depth]
    for i in range(unique_depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pweights[i]
            pweights[i] = next_one_portion * (unique_depth + 1.0) / ((i + 1.0) * one_fraction)
            next_one_portion = tmp - pweights[i] * zero_fraction * (unique_depth - i) / (unique_depth + 1.0)
        else:
            pweights[i] = (pweights[i] * (unique_depth + 1.0)) / (zero_fraction * (unique_depth - i))
    for i in range(path_index, unique_depth):
        feature_indexes[i] = feature_indexes[i + 1]
        zero_fractions[i] = zero_fractions[i + 1]
        one_fractions[i] = one_fractions[i + 1]


def _unwound_path_sum(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, path_index):
    one_fraction = one_fractions[path_index]
    zero_fraction = zero_fractions[path_index]
    next_one_portion = pweights[unique_depth]
    total = 0.0
    for i in range(unique_depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one_portion * (unique_depth + 1.0) / ((i + 1.0) * one_fraction)
            total += tmp
            next_one_portion = pweights[i] - tmp * zero_fraction * ((unique_depth - i) / (unique_depth + 1.0))
        else:
            total += (pweights[i] / zero_fraction) / ((unique_depth - i) / (unique_depth + 1.0))
    return total


def _tree_shap(feature, threshold, left, right, default_left, value, cover, x, phi,
               fi, zf, of, pw, stack_node, stack_depth, stack_offset, stack_zero, stack_one, stack_feat):
    """Depth-first walk of one tree with an explicit stack.

    Each frame copies its parent's path (stored at ``stack_offset``) into the
    region just past it, extends it by one element and either pays out at a
    leaf or pushes its two children (hot path on top, so it runs first).
    Children never write below their own region, so the parent path stays
    intact for the second child.
    """
    top = 0
    stack_node[0] = 0
    stack_depth[0] = 0
    stack_offset[0] = 0
    stack_zero[0] = 1.0
    stack_one[0] = 1.0
    stack_feat[0] = -1
    while top >= 0:
        node = stack_node[top]
        unique_depth = stack_depth[top]
        parent = stack_offset[top]
        p_zero = stack_zero[top]
        p_one = stack_one[top]
        p_feat = stack_feat[top]
        top -= 1

        own = parent + unique_depth + 1
        for i in range(unique_depth + 1):
            fi[own + i] = fi[parent + i]
            zf[own + i] = zf[parent + i]
            of[own + i] = of[parent + i]
            pw[own + i] = pw[parent + i]
        feature_indexes = fi[own:]
        zero_fractions = zf[own:]
        one_fractions = of[own:]
        pweights = pw[own:]
        _extend_path(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, p_zero, p_one, p_feat)

        split = feature[node]
        if split < 0:
            for i in range(1, unique_depth + 1):
                w = _unwound_path_sum(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, i)
                phi[feature_indexes[i]] += w * (one_fractions[i] - zero_fractions[i]) * value[node]
            continue

        v = x[split]
        if np.isnan(v):
            hot = left[node] if default_left[node] == 1 else right[node]
        elif v < threshold[node]:
            hot = left[node]
        else:
            hot = right[node]
        cold = right[node] if hot == left[node] else left[node]
        w = cover[node]
        incoming_zero = 1.0
        incoming_one = 1.0

        # a feature already on the path is unwound and re-added with combined fractions
        path_index = 0
        while path_index <= unique_depth:
            if feature_indexes[path_index] == split:
                break
            path_index += 1
        if path_index != unique_depth + 1:
            incoming_zero = zero_fractions[path_index]
            incoming_one = one_fractions[path_index]
            _unwind_path(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, path_index)
            unique_depth -= 1

        top += 1
        stack_node[top] = cold
        stack_depth[top] = unique_depth + 1
        stack_offset[top] = own
        stack_zero[top] = cover[cold] / w * incoming_zero
        stack_one[top] = 0.0
        stack_feat[top] = split
        top += 1
        stack_node[top] = hot
        stack_depth[top] = unique_depth + 1
        stack_offset[top] = own
        stack_zero[top] = cover[hot] / w * incoming_zero
        stack_one[top] = incoming_one
        stack_feat[top] = split


def _shap_rows(X, feature, threshold, left, right, default_left, value, cover, offsets, tree_class, tree_depth, n_out, phi):
    """Accumulate attributions of every tree into ``phi`` of shape (n, n_out, d)."""
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        a = offsets[t]
        b = offsets[t + 1]
        if b - a < 2:
            continue
        maxd = tree_depth[t] + 2
        size = (maxd * (maxd + 1)) // 2 + maxd
        fi = np.zeros(size, np.int64)
        zf = np.zeros(size)
        of = np.zeros(size)
        pw = np.zeros(size)
        depth_cap = 2 * maxd + 2
        s_node = np.zeros(depth_cap, np.int64)
        s_depth = np.zeros(depth_cap, np.int64)
        s_offset = np.zeros(depth_cap, np.int64)
        s_zero = np.zeros(depth_cap)
        s_one = np.zeros(depth_cap)
        s_feat = np.zeros(depth_cap, np.int64)
        k = tree_class[t]
        for r in range(n):
            _tree_shap(feature[a:b], threshold[a:b], left[a:b], right[a:b], default_left[a:b], value[a:b],
                       cover[a:b], X[r], phi[r, k], fi, zf, of, pw, s_node, s_depth, s_offset, s_zero, s_one, s_feat)


_extend_path_nb = njit(_extend_path)
_unwind_path_nb = njit(_unwind_path)
_unwound_path_sum_nb = njit(_unwound_path_sum)


def _compile():
    # rebind the helpers inside copies of the walkers so the compiled versions
    # call compiled helpers
    import types

    g = dict(globals())
    g.update(_extend_path=_extend_path_nb, _unwind_path=_unwind_path_nb, _unwound_path_sum=_unwound_path_sum_nb)
    walk = njit(types.FunctionType(_tree_shap.__code__, g, "_tree_shap_nb"))
    g["_tree_shap"] = walk
    rows = njit(types.FunctionType(_shap_rows.__code__, g, "_shap_rows_nb"))
    return walk, rows


_tree_shap_nb, _shap_rows_nb = _compile()

SHAP_KERNELS = {"numba": _shap_rows_nb, "numpy": _shap_rows}
