"""Tree-growing and traversal kernels.

Every kernel has a numba loop form (``*_nb``) and a numpy form (``*_np``). The
two perform the same floating-point operations in the same order, so they grow
bit-identical trees; only speed differs.

Tree arrays (tree-local node indices, root = 0):
    feature      int64, -1 at leaves
    threshold    float64, rows with x < threshold go left
    left, right  int64 child indices, -1 at leaves
    default_left uint8, direction taken when the split feature is NaN
    value        float64 leaf output (learning rate applied), 0 for internal nodes
    cover        float64 hessian sum of the training rows reaching the node
    gain         float64 split gain, 0 at leaves
"""

import numpy as np

from .._accel import njit

# splits must improve the regularised objective by more than this
MIN_SPLIT_GAIN = 1e-12


@njit
def _score_nb(G, H, lam, alpha):
    if G > alpha:
        t = G - alpha
    elif G < -alpha:
        t = G + alpha
    else:
        return 0.0
    d = H + lam
    if d <= 0.0:
        return 0.0
    return t * t / d


@njit
def _weight_nb(G, H, lam, alpha):
    if G > alpha:
        t = G - alpha
    elif G < -alpha:
        t = G + alpha
    else:
        return 0.0
    d = H + lam
    if d <= 0.0:
        return 0.0
    return -t / d


@njit
def build_tree_nb(X, order, n_valid, g, h, in_sample, feats, lam, alpha, mcw, max_depth, lr):
    n = X.shape[0]
    n_in = 0
    for r in range(n):
        if in_sample[r]:
            n_in += 1
    cap = 2 * max(n_in, 1) + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    default_left = np.zeros(cap, np.uint8)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    gain = np.zeros(cap)
    node_G = np.zeros(cap)
    node_H = np.zeros(cap)

    pos = np.full(n, -1, np.int64)
    for r in range(n):
        if in_sample[r]:
            pos[r] = 0
            node_G[0] += g[r]
            node_H[0] += h[r]

    n_nodes = 1
    lo = 0
    hi = 1
    depth = 0
    while lo < hi:
        m = hi - lo
        best_gain = np.full(m, MIN_SPLIT_GAIN)
        best_feat = np.full(m, -1, np.int64)
        best_thr = np.zeros(m)
        best_dl = np.zeros(m, np.uint8)
        if max_depth == 0 or depth < max_depth:
            Gm = np.zeros(m)
            Hm = np.zeros(m)
            GL = np.zeros(m)
            HL = np.zeros(m)
            last = np.zeros(m)
            seen = np.zeros(m, np.bool_)
            for fi in range(feats.shape[0]):
                f = feats[fi]
                Gm[:] = 0.0
                Hm[:] = 0.0
                for j in range(n_valid[f], n):
                    r = order[f, j]
                    p = pos[r]
                    if p >= lo:
                        Gm[p - lo] += g[r]
                        Hm[p - lo] += h[r]
                GL[:] = 0.0
                HL[:] = 0.0
                seen[:] = False
                for j in range(n_valid[f]):
                    r = order[f, j]
                    p = pos[r]
                    if p < lo:
                        continue
                    k = p - lo
                    v = X[r, f]
                    if seen[k] and v > last[k]:
                        Gt = node_G[p]
                        Ht = node_H[p]
                        sp = _score_nb(Gt, Ht, lam, alpha)
                        thr = 0.5 * (last[k] + v)
                        if not thr > last[k]:
                            thr = v
                        # missing values routed left
                        gl = GL[k] + Gm[k]
                        hl = HL[k] + Hm[k]
                        gr = Gt - gl
                        hr = Ht - hl
                        if hl >= mcw and hr >= mcw:
                            gn = 0.5 * (_score_nb(gl, hl, lam, alpha) + _score_nb(gr, hr, lam, alpha) - sp)
                            if gn > best_gain[k]:
                                best_gain[k] = gn
                                best_feat[k] = f
                                best_thr[k] = thr
                                best_dl[k] = 1
                        # missing values routed right
                        gl = GL[k]
                        hl = HL[k]
                        gr = Gt - gl
                        hr = Ht - hl
                        if hl >= mcw and hr >= mcw:
                            gn = 0.5 * (_score_nb(gl, hl, lam, alpha) + _score_nb(gr, hr, lam, alpha) - sp)
                            if gn > best_gain[k]:
                                best_gain[k] = gn
                                best_feat[k] = f
                                best_thr[k] = thr
                                best_dl[k] = 0
                    GL[k] += g[r]
                    HL[k] += h[r]
                    last[k] = v
                    seen[k] = True

        for k in range(m):
            p = lo + k
            cover[p] = node_H[p]
            if best_feat[k] >= 0:
                feature[p] = best_feat[k]
                threshold[p] = best_thr[k]
                default_left[p] = best_dl[k]
                gain[p] = best_gain[k]
                left[p] = n_nodes
                right[p] = n_nodes + 1
                n_nodes += 2
            else:
                value[p] = lr * _weight_nb(node_G[p], node_H[p], lam, alpha)

        for r in range(n):
            p = pos[r]
            if p < lo:
                continue
            f = feature[p]
            if f < 0:
                pos[r] = -1
                continue
            v = X[r, f]
            if np.isnan(v):
                go_left = default_left[p] == 1
            else:
                go_left = v < threshold[p]
            c = left[p] if go_left else right[p]
            pos[r] = c
            node_G[c] += g[r]
            node_H[c] += h[r]
        lo = hi
        hi = n_nodes
        depth += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        default_left[:n_nodes].copy(),
        value[:n_nodes].copy(),
        cover[:n_nodes].copy(),
        gain[:n_nodes].copy(),
    )


def _seqsum(a):
    # left-to-right summation, matching the loop kernel
    return float(np.cumsum(a)[-1]) if a.size else 0.0


def _soft(G, alpha):
    return np.where(G > alpha, G - alpha, np.where(G < -alpha, G + alpha, 0.0))


def _score_np(G, H, lam, alpha):
    t = _soft(G, alpha)
    d = H + lam
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d > 0.0, t * t / d, 0.0)


def build_tree_np(X, order, n_valid, g, h, in_sample, feats, lam, alpha, mcw, max_depth, lr):
    # order/n_valid are accepted for signature parity; the numpy path sorts per node
    n = X.shape[0]
    pos = np.where(in_sample, 0, -1).astype(np.int64)
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    default_left = [0]
    value = [0.0]
    cover = [0.0]
    gain = [0.0]
    rows0 = np.flatnonzero(in_sample)
    node_G = [_seqsum(g[rows0])]
    node_H = [_seqsum(h[rows0])]

    lo, hi, depth = 0, 1, 0
    while lo < hi:
        splittable = max_depth == 0 or depth < max_depth
        members = {}
        for p in range(lo, hi):
            members[p] = np.flatnonzero(pos == p)
        for p in range(lo, hi):
            rows = members[p]
            Gt, Ht = node_G[p], node_H[p]
            best = (MIN_SPLIT_GAIN, -1, 0.0, 0)
            if splittable and rows.size > 1:
                sp = float(_score_np(np.float64(Gt), np.float64(Ht), lam, alpha))
                gr_rows, hr_rows = g[rows], h[rows]
                for f in feats:
                    v = X[rows, f]
                    miss = np.isnan(v)
                    Gm = _seqsum(gr_rows[miss])
                    Hm = _seqsum(hr_rows[miss])
                    keep = ~miss
                    vv = v[keep]
                    if vv.size < 2:
                        continue
                    o = np.argsort(vv, kind="stable")
                    vs = vv[o]
                    cg = np.cumsum(gr_rows[keep][o])
                    ch = np.cumsum(hr_rows[keep][o])
                    cut = np.flatnonzero(vs[:-1] < vs[1:])
                    if cut.size == 0:
                        continue
                    GLc, HLc = cg[cut], ch[cut]
                    lastv, nextv = vs[cut], vs[cut + 1]
                    thr = 0.5 * (lastv + nextv)
                    thr = np.where(thr > lastv, thr, nextv)
                    cand = np.empty(2 * cut.size)
                    for slot, (gl, hl) in enumerate(((GLc + Gm, HLc + Hm), (GLc, HLc))):
                        gr = Gt - gl
                        hr = Ht - hl
                        gn = 0.5 * (_score_np(gl, hl, lam, alpha) + _score_np(gr, hr, lam, alpha) - sp)
                        gn = np.where((hl >= mcw) & (hr >= mcw), gn, -np.inf)
                        cand[slot::2] = gn
                    i = int(np.argmax(cand))
                    if cand[i] > best[0]:
                        best = (float(cand[i]), int(f), float(thr[i // 2]), 1 if i % 2 == 0 else 0)
            cover[p] = Ht
            if best[1] >= 0:
                gain[p], feature[p], threshold[p], default_left[p] = best
                left[p] = len(feature)
                right[p] = len(feature) + 1
                for _ in range(2):
                    feature.append(-1)
                    threshold.append(0.0)
                    left.append(-1)
                    right.append(-1)
                    default_left.append(0)
                    value.append(0.0)
                    cover.append(0.0)
                    gain.append(0.0)
                rows = members[p]
                v = X[rows, best[1]]
                go_left = np.where(np.isnan(v), best[3] == 1, v < best[2])
                lrows, rrows = rows[go_left], rows[~go_left]
                pos[lrows] = left[p]
                pos[rrows] = right[p]
                node_G += [_seqsum(g[lrows]), _seqsum(g[rrows])]
                node_H += [_seqsum(h[lrows]), _seqsum(h[rrows])]
            else:
                t = float(_soft(np.float64(Gt), alpha))
                d = Ht + lam
                value[p] = lr * (-t / d) if (d > 0.0 and t != 0.0) else 0.0
                pos[members[p]] = -1
        lo, hi = hi, len(feature)
        depth += 1

    return (
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(default_left, dtype=np.uint8),
        np.asarray(value, dtype=float),
        np.asarray(cover, dtype=float),
        np.asarray(gain, dtype=float),
    )


@njit
def predict_tree_nb(X, feature, threshold, left, right, default_left, value):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            v = X[r, feature[node]]
            if np.isnan(v):
                node = left[node] if default_left[node] == 1 else right[node]
            elif v < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


def predict_tree_np(X, feature, threshold, left, right, default_left, value):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feature[node] >= 0
    rows = np.arange(n)
    while active.any():
        idx = rows[active]
        nd = node[idx]
        v = X[idx, feature[nd]]
        go_left = np.where(np.isnan(v), default_left[nd] == 1, v < threshold[nd])
        node[idx] = np.where(go_left, left[nd], right[nd])
        active[idx] = feature[node[idx]] >= 0
    return value[node]


@njit
def predict_packed_nb(X, feature, threshold, left, right, default_left, value, offsets, tree_class, n_trees, n_out):
    n = X.shape[0]
    out = np.zeros((n, n_out))
    for r in range(n):
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                i = base + node
                v = X[r, feature[i]]
                if np.isnan(v):
                    node = left[i] if default_left[i] == 1 else right[i]
                elif v < threshold[i]:
                    node = left[i]
                else:
                    node = right[i]
            out[r, tree_class[t]] += value[base + node]
    return out


def predict_packed_np(X, feature, threshold, left, right, default_left, value, offsets, tree_class, n_trees, n_out):
    out = np.zeros((X.shape[0], n_out))
    for t in range(n_trees):
        a, b = offsets[t], offsets[t + 1]
        out[:, tree_class[t]] += predict_tree_np(
            X, feature[a:b], threshold[a:b], left[a:b], right[a:b], default_left[a:b], value[a:b]
        )
    return out


KERNELS = {
    "numba": {"build": build_tree_nb, "predict_tree": predict_tree_nb, "predict_packed": predict_packed_nb},
    "numpy": {"build": build_tree_np, "predict_tree": predict_tree_np, "predict_packed": predict_packed_np},
}
